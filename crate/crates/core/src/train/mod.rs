//! Cross-entropy training with plain mini-batch SGD on a class-balanced
//! subset of the training data.

mod backward;
pub mod gradcheck;

pub use backward::{backward, Gradients};

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params, TransformerModel};
use crate::program::IrProgram;
use crate::scalar::{DType, Scalar};
use crate::tokenizer::{encode, truncate, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::Single => DType::F32,
            Precision::Double => DType::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Size of the balanced subset drawn from each class.
    pub per_class_samples: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            per_class_samples: usize::MAX,
            precision: Precision::Single,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.per_class_samples == 0 {
            return Err(Error::Config("per_class_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub final_train_accuracy: f64,
    pub n_train_samples: usize,
    pub wall_time_secs: f64,
    pub seed: u64,
    pub dtype: DType,
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
}

/// One encoded, unpadded training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub label: u8,
}

impl Sample {
    /// Encodes and truncates to `max_len`. No padding is added: examples are
    /// processed one at a time, so every position is real.
    pub fn from_program(program: &IrProgram, vocab: &Vocabulary, max_len: usize) -> Self {
        let ids = truncate(&encode(program, vocab), max_len);
        let mask = vec![1; ids.len()];
        Sample {
            ids,
            mask,
            label: program.label,
        }
    }
}

/// `−log softmax(logits)[label]`, evaluated as a softplus of the logit gap.
pub fn cross_entropy<T: Scalar>(logits: [T; 2], label: u8) -> T {
    let (own, other) = if label == 1 {
        (logits[1], logits[0])
    } else {
        (logits[0], logits[1])
    };
    let z = other - own;
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `p ← p − lr·g` for every parameter.
pub fn sgd_step<T: Scalar>(params: &mut Params<T>, grads: &Params<T>, learning_rate: T) -> Result<()> {
    let mut targets = params.named_tensors_mut();
    let sources = grads.named_tensors();
    if targets.len() != sources.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors but {} gradients",
            targets.len(),
            sources.len()
        )));
    }
    for ((name, p), (_, g)) in targets.iter().zip(&sources) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    for ((_, p), (_, g)) in targets.iter_mut().zip(&sources) {
        p.zip_mut_with(g, |w, &d| *w = *w - learning_rate * d);
    }
    Ok(())
}

/// Indices of an equal-size random subset of each class. The per-class count
/// is clamped to the minority class size.
pub fn balanced_indices(labels: &[u8], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let vulnerable: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let benign: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if vulnerable.is_empty() {
        return Err(Error::EmptyClass(1));
    }
    if benign.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    let k = per_class.min(vulnerable.len()).min(benign.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * k);
    for class in [&vulnerable, &benign] {
        let mut picked: Vec<usize> = index::sample(&mut rng, class.len(), k)
            .into_iter()
            .map(|j| class[j])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    out.sort_unstable();
    Ok(out)
}

pub fn balanced_sample(
    dataset: &[IrProgram],
    per_class: usize,
    seed: u64,
) -> Result<Vec<IrProgram>> {
    let labels: Vec<u8> = dataset.iter().map(|p| p.label).collect();
    Ok(balanced_indices(&labels, per_class, seed)?
        .into_iter()
        .map(|i| dataset[i].clone())
        .collect())
}

/// Share of samples classified correctly at threshold 0.5, no dropout.
pub fn accuracy<T: Scalar>(model: &TransformerModel<T>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let half = T::from_f64(0.5).unwrap();
    let mut correct = 0usize;
    for s in samples {
        let p = model.forward(&s.ids, &s.mask)?;
        if u8::from(p.prob >= half) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Shuffled mini-batch SGD over a balanced subset of `dataset`.
///
/// The subset is drawn once; batches are reshuffled every epoch. Given the
/// seed, the data and the scalar type, the final weights are reproducible.
pub fn train<T: Scalar>(
    mut model: TransformerModel<T>,
    dataset: &[IrProgram],
    cfg: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<(TransformerModel<T>, TrainReport)> {
    cfg.validate()?;
    if cfg.precision.dtype() != T::DTYPE {
        return Err(Error::Config(format!(
            "precision {:?} requested but model scalar is {}",
            cfg.precision,
            T::DTYPE
        )));
    }
    if vocab.len() > model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} ids but model vocab_size is {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let started = Instant::now();
    let subset = balanced_sample(dataset, cfg.per_class_samples, cfg.seed)?;
    let samples: Vec<Sample> = subset
        .iter()
        .map(|p| Sample::from_program(p, vocab, model.config.max_len))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let grads = backward(&model, &batch, Some(&mut rng)).map_err(|e| {
                Error::TrainingAborted {
                    epoch,
                    batch: b,
                    source: Box::new(e),
                }
            })?;
            total += grads.loss.to_f64().unwrap() * batch.len() as f64;
            sgd_step(&mut model.params, &grads.params, lr)?;
        }
        epoch_losses.push(total / samples.len() as f64);
    }

    let final_train_accuracy = accuracy(&model, &samples)?;
    let report = TrainReport {
        epoch_losses,
        final_train_accuracy,
        n_train_samples: samples.len(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        dtype: T::DTYPE,
        train_config: cfg.clone(),
        model_config: model.config.clone(),
    };
    Ok((model, report))
}
