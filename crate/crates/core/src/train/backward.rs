//! Reverse-mode gradients of the mean cross-entropy, written out by hand for
//! each layer of the encoder.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;

use super::{cross_entropy, Sample};
use crate::error::{Error, Result};
use crate::model::{BlockTrace, BlockWeights, ForwardTrace, Params, TransformerModel};
use crate::model::ops::head_cols;
use crate::scalar::Scalar;

/// Gradient of the mean batch loss for every parameter, plus the loss itself.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Params<T>,
    pub loss: T,
    /// Correct predictions (threshold 0.5) observed during the pass.
    pub correct: usize,
}

/// Exact gradients of the mean cross-entropy over `batch`. Dropout is applied
/// only when `rng` is given.
pub fn backward<T: Scalar, R: Rng>(
    model: &TransformerModel<T>,
    batch: &[Sample],
    mut rng: Option<&mut R>,
) -> Result<Gradients<T>> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let mut grads = Params::zeros(&model.config);
    let scale = T::one() / T::from_usize(batch.len()).unwrap();
    let mut loss = T::zero();
    let mut correct = 0;
    for sample in batch {
        let trace = model.forward_trace(&sample.ids, &sample.mask, rng.as_deref_mut())?;
        loss += cross_entropy(trace.prediction.logits, sample.label);
        let predicted = u8::from(trace.prediction.prob >= T::from_f64(0.5).unwrap());
        if predicted == sample.label {
            correct += 1;
        }
        accumulate(model, &trace, sample.label, scale, &mut grads);
    }
    for (name, t) in grads.named_tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: name });
        }
    }
    Ok(Gradients {
        params: grads,
        loss: loss * scale,
        correct,
    })
}

fn relu_mask<T: Scalar>(pre: &Array2<T>) -> Array2<T> {
    pre.mapv(|v| if v > T::zero() { T::one() } else { T::zero() })
}

fn accumulate<T: Scalar>(
    model: &TransformerModel<T>,
    trace: &ForwardTrace<T>,
    label: u8,
    scale: T,
    grads: &mut Params<T>,
) {
    let p1 = trace.prediction.prob;
    let p0 = T::one() - p1;
    let y1 = if label == 1 { T::one() } else { T::zero() };
    let y0 = T::one() - y1;
    let mut d = Array2::from_shape_vec((1, 2), vec![(p0 - y0) * scale, (p1 - y1) * scale])
        .expect("1x2");

    let head = &model.params.head;
    for l in (0..head.len()).rev() {
        let g = &mut grads.head[l];
        g.weight += &trace.head_inputs[l].t().dot(&d);
        g.bias += &d.sum_axis(Axis(0));
        d = d.dot(&head[l].weight.t());
        if l > 0 {
            d *= &relu_mask(&trace.head_pre[l - 1]);
        }
    }

    let n = trace.ids.len();
    let mut dh = Array2::zeros((n, model.config.d_model));
    dh.slice_mut(s![0..1, ..]).assign(&d);

    for (l, block_trace) in trace.blocks.iter().enumerate().rev() {
        dh = block_backward(
            &model.params.blocks[l],
            block_trace,
            model.config.n_heads,
            dh,
            &mut grads.blocks[l],
        );
    }

    for (t, &id) in trace.ids.iter().enumerate() {
        let mut row = grads.embedding.row_mut(id as usize);
        row += &dh.row(t);
    }
}

/// Backward pass of LayerNorm before gain/bias, given `dxhat`.
fn layer_norm_backward<T: Scalar>(
    dxhat: &Array2<T>,
    xhat: &Array2<T>,
    inv_std: &Array1<T>,
) -> Array2<T> {
    let d = T::from_usize(dxhat.ncols()).unwrap();
    let mut dx = Array2::zeros(dxhat.dim());
    for (((mut out, g), xh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(xhat.rows())
        .zip(inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = inv * (gi - mean_g - xi * mean_gx));
    }
    dx
}

fn gain_bias_grads<T: Scalar>(
    dout: &Array2<T>,
    xhat: &Array2<T>,
    gain: &mut Array1<T>,
    bias: &mut Array1<T>,
) {
    *gain += &(dout * xhat).sum_axis(Axis(0));
    *bias += &dout.sum_axis(Axis(0));
}

fn block_backward<T: Scalar>(
    w: &BlockWeights<T>,
    tr: &BlockTrace<T>,
    n_heads: usize,
    dout: Array2<T>,
    g: &mut BlockWeights<T>,
) -> Array2<T> {
    let row = |v: &Array1<T>| v.view().insert_axis(Axis(0)).to_owned();

    // out = LN2(ln1_out + ff_out)
    gain_bias_grads(&dout, &tr.ln2_xhat, &mut g.ln2_gain, &mut g.ln2_bias);
    let dr2 = layer_norm_backward(&(&dout * &row(&w.ln2_gain)), &tr.ln2_xhat, &tr.ln2_inv_std);
    let mut da = dr2.clone();
    let mut dff = dr2;
    if let Some(m) = &tr.ff_dropout {
        dff *= m;
    }
    g.ff2.weight += &tr.ff_act.t().dot(&dff);
    g.ff2.bias += &dff.sum_axis(Axis(0));
    let mut dpre = dff.dot(&w.ff2.weight.t());
    dpre *= &relu_mask(&tr.ff_pre);
    g.ff1.weight += &tr.ln1_out.t().dot(&dpre);
    g.ff1.bias += &dpre.sum_axis(Axis(0));
    da += &dpre.dot(&w.ff1.weight.t());

    // ln1_out = LN1(input + attn_out)
    gain_bias_grads(&da, &tr.ln1_xhat, &mut g.ln1_gain, &mut g.ln1_bias);
    let dr1 = layer_norm_backward(&(&da * &row(&w.ln1_gain)), &tr.ln1_xhat, &tr.ln1_inv_std);
    let mut dx = dr1.clone();
    let mut dm = dr1;
    if let Some(m) = &tr.attn_dropout {
        dm *= m;
    }
    g.w_o += &tr.concat.t().dot(&dm);
    let dconcat = dm.dot(&w.w_o.t());

    let d_model = w.w_q.nrows();
    let dk = d_model / n_heads;
    let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
    let n = dx.nrows();
    let mut dq = Array2::zeros((n, d_model));
    let mut dkm = Array2::zeros((n, d_model));
    let mut dv = Array2::zeros((n, d_model));
    for h in 0..n_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let p = &tr.probs[h];
        let d_oh = dconcat.slice(cols);
        let dp = d_oh.dot(&head_cols(&tr.v, h, dk).t());
        dv.slice_mut(cols).assign(&p.t().dot(&d_oh));
        // softmax Jacobian, row by row
        let mut ds = p * &dp;
        let row_dot = ds.sum_axis(Axis(1));
        for ((mut ds_row, p_row), &rd) in ds.rows_mut().into_iter().zip(p.rows()).zip(&row_dot) {
            Zip::from(&mut ds_row)
                .and(&p_row)
                .for_each(|v, &pi| *v -= pi * rd);
        }
        ds.mapv_inplace(|v| v * scale);
        dq.slice_mut(cols).assign(&ds.dot(&head_cols(&tr.k, h, dk)));
        dkm.slice_mut(cols).assign(&ds.t().dot(&head_cols(&tr.q, h, dk)));
    }
    g.w_q += &tr.input.t().dot(&dq);
    g.w_k += &tr.input.t().dot(&dkm);
    g.w_v += &tr.input.t().dot(&dv);
    dx += &dq.dot(&w.w_q.t());
    dx += &dkm.dot(&w.w_k.t());
    dx += &dv.dot(&w.w_v.t());
    dx
}
