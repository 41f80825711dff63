//! Accuracy evaluation and the classifier-head depth ablation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerModel};
use crate::program::IrProgram;
use crate::scalar::Scalar;
use crate::tokenizer::Vocabulary;
use crate::train::{train, Sample, TrainConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold {threshold} not in (0, 1)")))
    }
}

/// Classifies one preprocessed program. Ties at the threshold count as
/// vulnerable.
pub fn predict<T: Scalar>(
    model: &TransformerModel<T>,
    program: &IrProgram,
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<(u8, f64)> {
    check_threshold(threshold)?;
    let s = Sample::from_program(program, vocab, model.config.max_len);
    let prob = model.forward(&s.ids, &s.mask)?.prob.to_f64().unwrap();
    Ok((u8::from(prob >= threshold), prob))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, label: u8, predicted: u8) {
        match (label, predicted) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (0, _) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Confusion,
    pub n_samples: usize,
    pub threshold: f64,
}

impl EvalReport {
    /// Aggregates `(label, predicted)` pairs.
    pub fn from_pairs<I: IntoIterator<Item = (u8, u8)>>(pairs: I, threshold: f64) -> Result<Self> {
        let mut confusion = Confusion::default();
        for (label, predicted) in pairs {
            confusion.record(label, predicted);
        }
        let n = confusion.total();
        if n == 0 {
            return Err(Error::EmptyTestSet);
        }
        Ok(EvalReport {
            accuracy: (confusion.tp + confusion.tn) as f64 / n as f64,
            confusion,
            n_samples: n,
            threshold,
        })
    }
}

/// Accuracy over the whole test set; nothing is subsampled or rebalanced.
pub fn evaluate<T: Scalar>(
    model: &TransformerModel<T>,
    test_set: &[IrProgram],
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<EvalReport> {
    check_threshold(threshold)?;
    if test_set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut pairs = Vec::with_capacity(test_set.len());
    for p in test_set {
        let (predicted, _) = predict(model, p, vocab, threshold)?;
        pairs.push((p.label, predicted));
    }
    EvalReport::from_pairs(pairs, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub depth: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (n − 1); the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub repeats: usize,
    pub base_config: ModelConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Long format, one line per run: `depth,run,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,run,accuracy\n");
        for row in &self.rows {
            for (run, acc) in row.accuracies.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", row.depth, run, acc));
            }
        }
        out
    }
}

/// Seeds used when none are given: `base_seed, base_seed + 1, ...`.
pub fn default_seeds(base_seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|r| base_seed.wrapping_add(r)).collect()
}

/// For each head depth, trains and evaluates `seeds.len()` fresh models. Run
/// `r` of every depth uses `seeds[r]` for both initialisation and training,
/// so depths are compared on identical data orderings.
#[allow(clippy::too_many_arguments)]
pub fn ablate<T: Scalar>(
    base_config: &ModelConfig,
    train_cfg: &TrainConfig,
    depths: &[usize],
    seeds: &[u64],
    train_set: &[IrProgram],
    test_set: &[IrProgram],
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<AblationTable> {
    if depths.is_empty() {
        return Err(Error::Config("no head depths given".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let cfg = ModelConfig {
            n_fc_layers: depth,
            ..base_config.clone()
        };
        let mut accuracies = Vec::with_capacity(seeds.len());
        for (run, &seed) in seeds.iter().enumerate() {
            let wrap = |e: Error| Error::Ablation {
                depth,
                run,
                source: Box::new(e),
            };
            let model = TransformerModel::<T>::init(cfg.clone(), seed).map_err(wrap)?;
            let run_cfg = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let (model, _) = train(model, train_set, &run_cfg, vocab).map_err(wrap)?;
            let report = evaluate(&model, test_set, vocab, threshold).map_err(wrap)?;
            accuracies.push(report.accuracy);
        }
        let (mean, std) = mean_std(&accuracies);
        rows.push(AblationRow {
            depth,
            seeds: seeds.to_vec(),
            accuracies,
            mean,
            std,
        });
    }
    Ok(AblationTable {
        repeats: seeds.len(),
        base_config: base_config.clone(),
        rows,
    })
}
