use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use irvuln::checkpoint::{peek_manifest, Checkpoint};
use irvuln::corpus::{generate_synthetic, load_dataset, split, write_dataset, CorpusSpec};
use irvuln::eval::{ablate as run_ablation, default_seeds, evaluate as run_eval, predict as run_predict};
use irvuln::preprocess::{preprocess as run_preprocess, PreprocessConfig};
use irvuln::program::{IrProgram, ProgramRecord};
use irvuln::tokenizer::{build_vocab as run_build_vocab, Vocabulary};
use irvuln::train::gradcheck::{check_gradients, random_batch};
use irvuln::train::{train as run_train, Precision};
use irvuln::{DType, Error, Model64, Scalar, TransformerModel};

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Data,
    Usage,
    Internal,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Data => 1,
            Kind::Usage => 2,
            Kind::Internal => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Failure {
            kind: Kind::Usage,
            error,
        }
    }

    fn data(error: anyhow::Error) -> Self {
        Failure {
            kind: Kind::Data,
            error,
        }
    }
}

fn classify(e: &Error) -> Kind {
    match e {
        Error::Config(_) => Kind::Usage,
        Error::ShapeMismatch(_)
        | Error::NonFiniteGradient { .. }
        | Error::OddDimension(_)
        | Error::IdOutOfRange { .. } => Kind::Internal,
        Error::TrainingAborted { source, .. } | Error::Ablation { source, .. } => classify(source),
        _ => Kind::Data,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: classify(&e),
            error: e.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Writes through a sibling temp file so readers never see partial output.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> irvuln::Result<()>) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(e.into()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let f = std::fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))
            .map_err(Failure::data)?;
        let mut w = std::io::BufWriter::new(f);
        fill(&mut w)?;
        w.flush().map_err(|e| Failure::data(e.into()))?;
    }
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move output into {}", path.display()))
        .map_err(Failure::data)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CmdResult {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!("{what} {} does not exist", path.display())))
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    require_file(path, "config file")?;
    RunConfig::load(path).map_err(Failure::usage)
}

pub fn gen_corpus(spec_path: &Path, out: &Path) -> CmdResult {
    require_file(spec_path, "corpus spec")?;
    let text = std::fs::read_to_string(spec_path).map_err(|e| Failure::data(e.into()))?;
    let spec: CorpusSpec = serde_json::from_str(&text)
        .with_context(|| format!("invalid corpus spec {}", spec_path.display()))
        .map_err(Failure::usage)?;
    let corpus = generate_synthetic(&spec)?;
    let n_vuln = corpus.iter().filter(|p| p.label == 1).count();
    write_atomic(out, |w| write_dataset(w, &corpus))?;
    eprintln!(
        "wrote {} programs ({n_vuln} vulnerable) to {}",
        corpus.len(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(input: &Path, out: &Path, max_lines: Option<usize>) -> CmdResult {
    require_file(input, "input dataset")?;
    let cfg = PreprocessConfig {
        max_lines: max_lines.unwrap_or(irvuln::preprocess::DEFAULT_MAX_LINES),
        ..Default::default()
    };
    let raw = load_dataset(input)?;
    let programs = run_preprocess(&raw, &cfg)?;
    write_atomic(out, |w| write_dataset(w, &programs))?;
    eprintln!(
        "kept {} of {} programs (fewer than {} lines)",
        programs.len(),
        raw.len(),
        cfg.max_lines
    );
    Ok(())
}

pub fn build_vocab(input: &Path, out: &Path) -> CmdResult {
    require_file(input, "input dataset")?;
    let programs = load_dataset(input)?;
    let vocab = run_build_vocab(&programs)?;
    write_atomic(out, |w| vocab.write_to(w))?;
    eprintln!(
        "vocabulary: {} non-special tokens ({} ids with specials)",
        vocab.n_regular(),
        vocab.len()
    );
    Ok(())
}

/// Training and held-out programs after preprocessing, per the config.
fn prepare_data(cfg: &RunConfig) -> Result<(Vec<IrProgram>, Option<Vec<IrProgram>>), Failure> {
    let raw = match (&cfg.paths.dataset, &cfg.corpus) {
        (Some(path), _) => load_dataset(path)?,
        (None, Some(spec)) => generate_synthetic(spec)?,
        (None, None) => {
            return Err(Failure::usage(anyhow!(
                "config needs either paths.dataset or a [corpus] section"
            )))
        }
    };
    let programs = run_preprocess(&raw, &cfg.preprocess)?;
    eprintln!("{} programs after preprocessing", programs.len());
    match &cfg.split {
        Some(spec) => {
            let (train, test) = split(&programs, spec)?;
            Ok((train, Some(test)))
        }
        None => Ok((programs, None)),
    }
}

fn prepare_vocab(cfg: &RunConfig, train: &[IrProgram]) -> Result<Vocabulary, Failure> {
    if let Some(path) = cfg.paths.vocab.as_ref().filter(|p| p.is_file()) {
        eprintln!("loading vocabulary from {}", path.display());
        return Ok(Vocabulary::load(path)?);
    }
    let vocab = run_build_vocab(train)?;
    if let Some(path) = &cfg.paths.vocab {
        write_atomic(path, |w| vocab.write_to(w))?;
    }
    Ok(vocab)
}

pub fn train(config: &Path) -> CmdResult {
    let cfg = load_config(config)?;
    let checkpoint = cfg
        .paths
        .checkpoint
        .clone()
        .ok_or_else(|| Failure::usage(anyhow!("paths.checkpoint is required for train")))?;
    let (train_set, test_set) = prepare_data(&cfg)?;
    if let (Some(test), Some(path)) = (&test_set, &cfg.paths.test_split) {
        write_atomic(path, |w| write_dataset(w, test))?;
        eprintln!("wrote {} held-out programs to {}", test.len(), path.display());
    }
    let vocab = prepare_vocab(&cfg, &train_set)?;
    match cfg.train.precision {
        Precision::Single => train_with::<f32>(&cfg, &train_set, vocab, &checkpoint),
        Precision::Double => train_with::<f64>(&cfg, &train_set, vocab, &checkpoint),
    }
}

fn train_with<T: Scalar>(
    cfg: &RunConfig,
    train_set: &[IrProgram],
    vocab: Vocabulary,
    checkpoint: &Path,
) -> CmdResult {
    let model_cfg = cfg.model.resolve(vocab.len());
    let model = TransformerModel::<T>::init(model_cfg, cfg.train.seed)?;
    eprintln!(
        "training {} parameters on up to {} samples per class for {} epochs",
        model.params.n_params(),
        cfg.train.per_class_samples.min(train_set.len()),
        cfg.train.epochs
    );
    let (model, report) = run_train(model, train_set, &cfg.train, &vocab)?;
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        eprintln!("epoch {e}: mean loss {loss:.6}");
    }
    eprintln!("final train accuracy {:.4}", report.final_train_accuracy);
    let ck = Checkpoint {
        model,
        vocab,
        preprocess: cfg.preprocess.clone(),
    };
    write_atomic(checkpoint, |w| ck.write_to(w))?;
    let report_path = cfg.paths.report.clone().unwrap_or_else(|| {
        let mut p = checkpoint.as_os_str().to_owned();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_json(&report_path, &report)?;
    eprintln!("wrote {} and {}", checkpoint.display(), report_path.display());
    Ok(())
}

fn checkpoint_dtype(path: &Path) -> Result<DType, Failure> {
    require_file(path, "checkpoint")?;
    Ok(peek_manifest(path)?.dtype)
}

pub fn evaluate(checkpoint: &Path, test: &Path, out: &Path, threshold: f64) -> CmdResult {
    require_file(test, "test set")?;
    match checkpoint_dtype(checkpoint)? {
        DType::F32 => evaluate_with::<f32>(checkpoint, test, out, threshold),
        DType::F64 => evaluate_with::<f64>(checkpoint, test, out, threshold),
    }
}

fn evaluate_with<T: Scalar>(checkpoint: &Path, test: &Path, out: &Path, threshold: f64) -> CmdResult {
    let ck = Checkpoint::<T>::load(checkpoint)?;
    let programs = run_preprocess(&load_dataset(test)?, &ck.preprocess)?;
    let report = run_eval(&ck.model, &programs, &ck.vocab, threshold)?;
    write_json(out, &report)?;
    eprintln!(
        "accuracy {:.4} on {} programs (tp {} fp {} tn {} fn {})",
        report.accuracy,
        report.n_samples,
        report.confusion.tp,
        report.confusion.fp,
        report.confusion.tn,
        report.confusion.fn_
    );
    Ok(())
}

/// A JSONL record if the file starts with `{`, otherwise raw IR, one
/// instruction per line.
fn read_program(path: &Path) -> Result<IrProgram, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::data)?;
    if text.trim_start().starts_with('{') {
        let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let record: ProgramRecord = serde_json::from_str(first)
            .with_context(|| format!("invalid program record in {}", path.display()))
            .map_err(Failure::data)?;
        Ok(IrProgram::try_from(record)?)
    } else {
        let lines = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect();
        Ok(IrProgram::unlabeled(path.display().to_string(), lines))
    }
}

pub fn predict(checkpoint: &Path, program: &Path) -> CmdResult {
    require_file(program, "program file")?;
    match checkpoint_dtype(checkpoint)? {
        DType::F32 => predict_with::<f32>(checkpoint, program),
        DType::F64 => predict_with::<f64>(checkpoint, program),
    }
}

fn predict_with<T: Scalar>(checkpoint: &Path, program: &Path) -> CmdResult {
    let ck = Checkpoint::<T>::load(checkpoint)?;
    let raw = read_program(program)?;
    // A single program is classified whatever its length.
    let cfg = PreprocessConfig {
        max_lines: usize::MAX,
        ..ck.preprocess.clone()
    };
    if raw.len() >= ck.preprocess.max_lines {
        eprintln!(
            "warning: program has {} lines, training data had fewer than {}",
            raw.len(),
            ck.preprocess.max_lines
        );
    }
    let program = run_preprocess(&[raw], &cfg)?.remove(0);
    let (label, prob) = run_predict(&ck.model, &program, &ck.vocab, irvuln::eval::DEFAULT_THRESHOLD)?;
    println!("{label} {prob:.6}");
    Ok(())
}

pub fn parse_depths(spec: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::usage(anyhow!("invalid depth list `{spec}`"));
    let depths: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if depths.is_empty() || depths.contains(&0) {
        return Err(bad());
    }
    Ok(depths)
}

pub fn ablate(config: &Path, depths: &str, repeats: usize, out: &Path) -> CmdResult {
    let cfg = load_config(config)?;
    let depths = parse_depths(depths)?;
    if repeats == 0 {
        return Err(Failure::usage(anyhow!("--repeats must be at least 1")));
    }
    let (train_set, test_set) = prepare_data(&cfg)?;
    let test_set = test_set.ok_or_else(|| {
        Failure::usage(anyhow!("ablate needs a [split] section to hold out a test set"))
    })?;
    let vocab = prepare_vocab(&cfg, &train_set)?;
    match cfg.train.precision {
        Precision::Single => ablate_with::<f32>(&cfg, &depths, repeats, &train_set, &test_set, &vocab, out),
        Precision::Double => ablate_with::<f64>(&cfg, &depths, repeats, &train_set, &test_set, &vocab, out),
    }
}

fn ablate_with<T: Scalar>(
    cfg: &RunConfig,
    depths: &[usize],
    repeats: usize,
    train_set: &[IrProgram],
    test_set: &[IrProgram],
    vocab: &Vocabulary,
    out: &Path,
) -> CmdResult {
    let base = cfg.model.resolve(vocab.len());
    let seeds = default_seeds(cfg.train.seed, repeats);
    let table = run_ablation::<T>(
        &base,
        &cfg.train,
        depths,
        &seeds,
        train_set,
        test_set,
        vocab,
        irvuln::eval::DEFAULT_THRESHOLD,
    )?;
    write_json(out, &table)?;
    let csv = out.with_extension("csv");
    write_atomic(&csv, |w| {
        w.write_all(table.to_csv().as_bytes())?;
        Ok(())
    })?;
    for row in &table.rows {
        eprintln!("depth {}: mean {:.4} std {:.4}", row.depth, row.mean, row.std);
    }
    eprintln!("wrote {} and {}", out.display(), csv.display());
    Ok(())
}

pub fn grad_check(config: &Path) -> CmdResult {
    let cfg = load_config(config)?;
    let gc = &cfg.grad_check;
    let mut model_cfg = cfg.model.resolve(gc.vocab_size);
    model_cfg.dropout_rate = 0.0;
    model_cfg.max_len = model_cfg.max_len.max(gc.seq_len);
    let model = Model64::init(model_cfg, cfg.train.seed)?;
    if gc.seq_len < 3 || gc.batch == 0 || gc.vocab_size <= irvuln::tokenizer::SPECIALS.len() {
        return Err(Failure::usage(anyhow!(
            "grad_check needs seq_len >= 3, batch >= 1 and vocab_size > 4"
        )));
    }
    let batch = random_batch(gc.vocab_size, gc.seq_len, gc.batch, gc.seed);
    let report = check_gradients(&model, &batch, gc.eps)?;
    eprintln!(
        "checked {} parameters; max relative error {:.3e} at {}",
        report.n_checked, report.max_rel_error, report.worst_entry
    );
    if report.max_rel_error > gc.tolerance {
        return Err(Failure::data(anyhow!(
            "max relative error {:.3e} exceeds tolerance {:.0e}",
            report.max_rel_error,
            gc.tolerance
        )));
    }
    Ok(())
}
