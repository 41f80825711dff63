//! Stateless building blocks of the encoder. Activations are row-major:
//! one row per token.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

/// Additive bias applied to scores of masked key positions.
pub const MASK_BIAS: f64 = -1e9;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sinusoidal table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(max_len: usize, d_model: usize) -> Result<Array2<T>> {
    if d_model % 2 != 0 {
        return Err(Error::OddDimension(d_model));
    }
    let mut pe = Array2::zeros((max_len, d_model));
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            // Evaluate in f64 so both precisions see the same table up to rounding.
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            pe[[pos, 2 * i]] = c(angle.sin());
            pe[[pos, 2 * i + 1]] = c(angle.cos());
        }
    }
    Ok(pe)
}

/// Row-wise softmax of `q kᵀ / √d_k` with masked keys pushed to ~0.
pub fn attention_weights<T: Scalar>(
    q: ArrayView2<'_, T>,
    k: ArrayView2<'_, T>,
    key_mask: &[u8],
) -> Result<Array2<T>> {
    if q.ncols() != k.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != key_mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} keys but mask of length {}",
            k.nrows(),
            key_mask.len()
        )));
    }
    let scale = T::one() / T::from_usize(q.ncols()).unwrap().sqrt();
    let mut scores = q.dot(&k.t());
    scores.mapv_inplace(|v| v * scale);
    let bias: T = c(MASK_BIAS);
    for mut row in scores.rows_mut() {
        for (v, &m) in row.iter_mut().zip(key_mask) {
            if m == 0 {
                *v += bias;
            }
        }
        softmax_in_place(row.view_mut());
    }
    Ok(scores)
}

fn softmax_in_place<T: Scalar>(mut row: ndarray::ArrayViewMut1<'_, T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    row.mapv_inplace(|v| (v - max).exp());
    let sum: T = row.iter().copied().sum();
    row.mapv_inplace(|v| v / sum);
}

/// Scaled dot-product attention over one head.
pub fn attention<T: Scalar>(
    q: ArrayView2<'_, T>,
    k: ArrayView2<'_, T>,
    v: ArrayView2<'_, T>,
    key_mask: &[u8],
) -> Result<Array2<T>> {
    if q.nrows() != k.nrows() || k.nrows() != v.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "row counts differ: q {}, k {}, v {}",
            q.nrows(),
            k.nrows(),
            v.nrows()
        )));
    }
    let w = attention_weights(q, k, key_mask)?;
    Ok(w.dot(&v))
}

/// Splits column block `h` of width `dk`.
pub(crate) fn head_cols<T>(x: &Array2<T>, h: usize, dk: usize) -> ArrayView2<'_, T> {
    x.slice(s![.., h * dk..(h + 1) * dk])
}

/// Normalised rows and their inverse standard deviations, before gain/bias.
pub(crate) fn normalize_rows<T: Scalar>(x: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let d = T::from_usize(x.ncols()).unwrap();
    let eps: T = c(LAYER_NORM_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.iter().copied().sum::<T>() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *inv = T::one() / (var + eps).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    (xhat, inv_std)
}

pub fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    gain: ArrayView1<'_, T>,
    bias: ArrayView1<'_, T>,
) -> Array2<T> {
    let (mut xhat, _) = normalize_rows(x);
    scale_shift(&mut xhat, gain, bias);
    xhat
}

pub(crate) fn scale_shift<T: Scalar>(
    x: &mut Array2<T>,
    gain: ArrayView1<'_, T>,
    bias: ArrayView1<'_, T>,
) {
    for mut row in x.rows_mut() {
        Zip::from(&mut row)
            .and(&gain)
            .and(&bias)
            .for_each(|v, &g, &b| *v = *v * g + b);
    }
}

/// `x W + b` applied to every row.
pub fn affine<T: Scalar>(x: &Array2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += &b.view().insert_axis(Axis(0));
    y
}

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Numerically stable two-class softmax; returns p(class 1).
pub fn prob_of_positive<T: Scalar>(logits: [T; 2]) -> T {
    // σ(l1 − l0) written to avoid overflow in either direction.
    let z = logits[1] - logits[0];
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
