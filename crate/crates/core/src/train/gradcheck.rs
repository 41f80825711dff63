//! Central finite-difference check of [`backward`](super::backward).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, cross_entropy, Sample};
use crate::error::Result;
use crate::model::TransformerModel;
use crate::tokenizer::{CLS_ID, SEP_ID, SPECIALS};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[flat_index]` of the worst entry.
    pub worst_entry: String,
    pub n_checked: usize,
    /// Largest relative error per tensor, canonical order.
    pub per_tensor: Vec<(String, f64)>,
}

/// `|a − b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn mean_loss(model: &TransformerModel<f64>, batch: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        total += cross_entropy(model.forward(&s.ids, &s.mask)?.logits, s.label);
    }
    Ok(total / batch.len() as f64)
}

/// Compares every analytic gradient entry with `(L(w+ε) − L(w−ε)) / 2ε`.
/// Dropout is disabled for both sides.
pub fn check_gradients(
    model: &TransformerModel<f64>,
    batch: &[Sample],
    eps: f64,
) -> Result<GradCheckReport> {
    let analytic = backward(model, batch, None::<&mut ChaCha8Rng>)?.params;
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();

    let mut probe = model.clone();
    let mut per_tensor = Vec::with_capacity(analytic.len());
    let mut max_rel_error = 0.0;
    let mut worst_entry = String::new();
    let mut n_checked = 0;
    for (ti, (name, grads)) in analytic.iter().enumerate() {
        let mut tensor_max: f64 = 0.0;
        for (j, &g) in grads.iter().enumerate() {
            let original = nth_entry(&mut probe, ti, j, None);
            nth_entry(&mut probe, ti, j, Some(original + eps));
            let plus = mean_loss(&probe, batch)?;
            nth_entry(&mut probe, ti, j, Some(original - eps));
            let minus = mean_loss(&probe, batch)?;
            nth_entry(&mut probe, ti, j, Some(original));
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(g, numeric);
            if err > max_rel_error {
                max_rel_error = err;
                worst_entry = format!("{name}[{j}]");
            }
            tensor_max = tensor_max.max(err);
            n_checked += 1;
        }
        per_tensor.push((name.clone(), tensor_max));
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_entry,
        n_checked,
        per_tensor,
    })
}

/// Reads the `j`-th entry of tensor `ti`, writing `set` first when given.
fn nth_entry(model: &mut TransformerModel<f64>, ti: usize, j: usize, set: Option<f64>) -> f64 {
    let mut tensors = model.params.named_tensors_mut();
    let slot = tensors[ti].1.iter_mut().nth(j).expect("index in range");
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}

/// Random framed sequences (`[CLS] [SEP] ... [SEP]`) of exactly `seq_len`
/// tokens drawn from the regular ID range, labels alternating 0/1.
pub fn random_batch(vocab_size: usize, seq_len: usize, batch: usize, seed: u64) -> Vec<Sample> {
    assert!(seq_len >= 3, "need room for at least one regular token");
    assert!(vocab_size > SPECIALS.len(), "vocabulary has no regular tokens");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|b| {
            let mut ids = vec![CLS_ID, SEP_ID];
            while ids.len() < seq_len - 1 {
                ids.push(rng.gen_range(SPECIALS.len() as u32..vocab_size as u32));
            }
            ids.push(SEP_ID);
            Sample {
                mask: vec![1; ids.len()],
                ids,
                label: (b % 2) as u8,
            }
        })
        .collect()
}
