//! Transformer encoder classifier: token embedding plus sinusoidal positions,
//! post-norm encoder blocks with multi-head self-attention, and an FC head
//! reading the `[CLS]` row.

mod config;
pub mod ops;

pub use config::{ModelConfig, Preset};

use ndarray::{concatenate, s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use ops::{affine, attention_weights, head_cols, normalize_rows, relu, scale_shift};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `fan_in × fan_out`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        affine(x, &self.weight, &self.bias)
    }
}

/// Weights of one encoder block. Projections act on rows: `Q = E W_Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
    pub w_o: Array2<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
}

impl<T: Scalar> BlockWeights<T> {
    fn zeros(d_model: usize, d_ff: usize) -> Self {
        let sq = || Array2::zeros((d_model, d_model));
        BlockWeights {
            w_q: sq(),
            w_k: sq(),
            w_v: sq(),
            w_o: sq(),
            ff1: Linear::zeros(d_model, d_ff),
            ff2: Linear::zeros(d_ff, d_model),
            ln1_gain: Array1::zeros(d_model),
            ln1_bias: Array1::zeros(d_model),
            ln2_gain: Array1::zeros(d_model),
            ln2_bias: Array1::zeros(d_model),
        }
    }
}

/// Every learnable tensor of the model. Also used to hold gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    /// `vocab_size × d_model` lookup table.
    pub embedding: Array2<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub head: Vec<Linear<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Params {
            embedding: Array2::zeros((cfg.vocab_size, cfg.d_model)),
            blocks: (0..cfg.n_layers)
                .map(|_| BlockWeights::zeros(cfg.d_model, cfg.d_ff))
                .collect(),
            head: cfg
                .head_shapes()
                .into_iter()
                .map(|(i, o)| Linear::zeros(i, o))
                .collect(),
        }
    }

    /// Tensors in a fixed canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![("embedding".to_string(), self.embedding.view().into_dyn())];
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{l}.{n}");
            out.push((p("w_q"), b.w_q.view().into_dyn()));
            out.push((p("w_k"), b.w_k.view().into_dyn()));
            out.push((p("w_v"), b.w_v.view().into_dyn()));
            out.push((p("w_o"), b.w_o.view().into_dyn()));
            out.push((p("ff1.weight"), b.ff1.weight.view().into_dyn()));
            out.push((p("ff1.bias"), b.ff1.bias.view().into_dyn()));
            out.push((p("ff2.weight"), b.ff2.weight.view().into_dyn()));
            out.push((p("ff2.bias"), b.ff2.bias.view().into_dyn()));
            out.push((p("ln1.gain"), b.ln1_gain.view().into_dyn()));
            out.push((p("ln1.bias"), b.ln1_bias.view().into_dyn()));
            out.push((p("ln2.gain"), b.ln2_gain.view().into_dyn()));
            out.push((p("ln2.bias"), b.ln2_bias.view().into_dyn()));
        }
        for (l, h) in self.head.iter().enumerate() {
            out.push((format!("head.{l}.weight"), h.weight.view().into_dyn()));
            out.push((format!("head.{l}.bias"), h.bias.view().into_dyn()));
        }
        out
    }

    /// Mutable counterpart of [`Params::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![("embedding".to_string(), self.embedding.view_mut().into_dyn())];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            let p = |n: &str| format!("blocks.{l}.{n}");
            out.push((p("w_q"), b.w_q.view_mut().into_dyn()));
            out.push((p("w_k"), b.w_k.view_mut().into_dyn()));
            out.push((p("w_v"), b.w_v.view_mut().into_dyn()));
            out.push((p("w_o"), b.w_o.view_mut().into_dyn()));
            out.push((p("ff1.weight"), b.ff1.weight.view_mut().into_dyn()));
            out.push((p("ff1.bias"), b.ff1.bias.view_mut().into_dyn()));
            out.push((p("ff2.weight"), b.ff2.weight.view_mut().into_dyn()));
            out.push((p("ff2.bias"), b.ff2.bias.view_mut().into_dyn()));
            out.push((p("ln1.gain"), b.ln1_gain.view_mut().into_dyn()));
            out.push((p("ln1.bias"), b.ln1_bias.view_mut().into_dyn()));
            out.push((p("ln2.gain"), b.ln2_gain.view_mut().into_dyn()));
            out.push((p("ln2.bias"), b.ln2_bias.view_mut().into_dyn()));
        }
        for (l, h) in self.head.iter_mut().enumerate() {
            out.push((format!("head.{l}.weight"), h.weight.view_mut().into_dyn()));
            out.push((format!("head.{l}.bias"), h.bias.view_mut().into_dyn()));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Output of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction<T> {
    pub logits: [T; 2],
    /// p(vulnerable | program).
    pub prob: T,
}

/// Intermediate values of one encoder block, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct BlockTrace<T> {
    pub input: Array2<T>,
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    /// Attention weights per head.
    pub probs: Vec<Array2<T>>,
    pub concat: Array2<T>,
    pub attn_dropout: Option<Array2<T>>,
    pub ln1_xhat: Array2<T>,
    pub ln1_inv_std: Array1<T>,
    pub ln1_out: Array2<T>,
    pub ff_pre: Array2<T>,
    pub ff_act: Array2<T>,
    pub ff_dropout: Option<Array2<T>>,
    pub ln2_xhat: Array2<T>,
    pub ln2_inv_std: Array1<T>,
}

/// Everything backpropagation needs from one forward pass.
#[derive(Clone, Debug)]
pub(crate) struct ForwardTrace<T> {
    pub ids: Vec<u32>,
    pub blocks: Vec<BlockTrace<T>>,
    /// Inputs to each head layer (the first is the pooled `[CLS]` row).
    pub head_inputs: Vec<Array2<T>>,
    /// Pre-activation outputs of each head layer.
    pub head_pre: Vec<Array2<T>>,
    pub prediction: Prediction<T>,
}

/// A configured model with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    pe: Array2<T>,
}

impl<T: Scalar> TransformerModel<T> {
    /// All weights zero and LayerNorm gains one.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let pe = ops::positional_encoding(config.max_len, config.d_model)?;
        let mut params = Params::zeros(&config);
        for b in &mut params.blocks {
            b.ln1_gain.fill(T::one());
            b.ln2_gain.fill(T::one());
        }
        Ok(TransformerModel { config, params, pe })
    }

    /// Weight matrices uniform in `±1/√fan_in`, biases zero, LayerNorm gains
    /// one. Embedding rows use fan_in 1 (a one-hot lookup).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |a: &mut Array2<T>, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (a.nrows() as f64).sqrt();
            a.mapv_inplace(|_| c(rng.gen_range(-bound..=bound)));
        };
        let p = &mut model.params;
        p.embedding
            .mapv_inplace(|_| c(rng.gen_range(-1.0..=1.0)));
        for b in &mut p.blocks {
            fill(&mut b.w_q, &mut rng);
            fill(&mut b.w_k, &mut rng);
            fill(&mut b.w_v, &mut rng);
            fill(&mut b.w_o, &mut rng);
            fill(&mut b.ff1.weight, &mut rng);
            fill(&mut b.ff2.weight, &mut rng);
        }
        for h in &mut p.head {
            fill(&mut h.weight, &mut rng);
        }
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let expected = Params::<T>::zeros(&config);
        let got = params.named_tensors();
        let want = expected.named_tensors();
        if got.len() != want.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors, expected {}",
                got.len(),
                want.len()
            )));
        }
        for ((n, a), (_, b)) in got.iter().zip(&want) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{n}: shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        let pe = ops::positional_encoding(config.max_len, config.d_model)?;
        Ok(TransformerModel { config, params, pe })
    }

    pub fn positional_table(&self) -> &Array2<T> {
        &self.pe
    }

    /// Embedding lookup plus positional encoding; PAD positions are embedded
    /// like any other token.
    pub fn embed(&self, ids: &[u32]) -> Result<Array2<T>> {
        let vocab = self.config.vocab_size;
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: vocab,
            });
        }
        if ids.len() > self.config.max_len {
            return Err(Error::ShapeMismatch(format!(
                "sequence of {} tokens exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        let mut e = Array2::zeros((ids.len(), self.config.d_model));
        for (t, (mut row, &id)) in e.rows_mut().into_iter().zip(ids).enumerate() {
            row.assign(&self.params.embedding.row(id as usize));
            row += &self.pe.row(t);
        }
        Ok(e)
    }

    pub fn multi_head_attention(
        &self,
        e: &Array2<T>,
        block: &BlockWeights<T>,
        mask: &[u8],
    ) -> Result<Array2<T>> {
        multi_head_attention(e, block, self.config.n_heads, mask)
    }

    pub fn encoder_block(
        &self,
        e: &Array2<T>,
        block: &BlockWeights<T>,
        mask: &[u8],
    ) -> Result<Array2<T>> {
        let mut no_dropout = None::<(&mut ChaCha8Rng, f64)>;
        Ok(block_forward(e, block, self.config.n_heads, mask, &mut no_dropout)?.0)
    }

    /// Classification head on the `[CLS]` row of the final hidden states.
    pub fn classify(&self, hidden: &Array2<T>) -> Result<Prediction<T>> {
        let (pred, _, _) = head_forward(&self.params.head, hidden, self.config.d_model)?;
        Ok(pred)
    }

    /// Inference pass; dropout is never applied.
    pub fn forward(&self, ids: &[u32], mask: &[u8]) -> Result<Prediction<T>> {
        Ok(self.forward_trace(ids, mask, None::<&mut ChaCha8Rng>)?.prediction)
    }

    /// Forward pass recording activations. With `rng` set, dropout is applied
    /// at the configured rate.
    pub(crate) fn forward_trace<R: Rng>(
        &self,
        ids: &[u32],
        mask: &[u8],
        rng: Option<&mut R>,
    ) -> Result<ForwardTrace<T>> {
        if ids.len() != mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids but mask of length {}",
                ids.len(),
                mask.len()
            )));
        }
        if ids.is_empty() {
            return Err(Error::ShapeMismatch("empty input sequence".into()));
        }
        let mut dropout = match rng {
            Some(r) if self.config.dropout_rate > 0.0 => Some((r, self.config.dropout_rate)),
            _ => None,
        };
        let mut h = self.embed(ids)?;
        let mut blocks = Vec::with_capacity(self.params.blocks.len());
        for block in &self.params.blocks {
            let (out, trace) = block_forward(&h, block, self.config.n_heads, mask, &mut dropout)?;
            blocks.push(trace);
            h = out;
        }
        let (prediction, head_inputs, head_pre) =
            head_forward(&self.params.head, &h, self.config.d_model)?;
        Ok(ForwardTrace {
            ids: ids.to_vec(),
            blocks,
            head_inputs,
            head_pre,
            prediction,
        })
    }
}

/// Projections, per-head attention, concatenation and output projection.
pub fn multi_head_attention<T: Scalar>(
    e: &Array2<T>,
    block: &BlockWeights<T>,
    n_heads: usize,
    mask: &[u8],
) -> Result<Array2<T>> {
    let (_, _, _, _, concat) = mha_parts(e, block, n_heads, mask)?;
    Ok(concat.dot(&block.w_o))
}

type MhaParts<T> = (Array2<T>, Array2<T>, Array2<T>, Vec<Array2<T>>, Array2<T>);

fn mha_parts<T: Scalar>(
    e: &Array2<T>,
    block: &BlockWeights<T>,
    n_heads: usize,
    mask: &[u8],
) -> Result<MhaParts<T>> {
    let d = block.w_q.nrows();
    if e.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "activation width {} != d_model {d}",
            e.ncols()
        )));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "d_model {d} not divisible into {n_heads} heads"
        )));
    }
    let dk = d / n_heads;
    let q = e.dot(&block.w_q);
    let k = e.dot(&block.w_k);
    let v = e.dot(&block.w_v);
    let mut probs = Vec::with_capacity(n_heads);
    let mut outs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let p = attention_weights(head_cols(&q, h, dk), head_cols(&k, h, dk), mask)?;
        outs.push(p.dot(&head_cols(&v, h, dk)));
        probs.push(p);
    }
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    let concat = concatenate(Axis(1), &views).expect("heads share row count");
    Ok((q, k, v, probs, concat))
}

fn dropout_mask<T: Scalar, R: Rng>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<T> {
    let keep: T = c(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

fn block_forward<T: Scalar, R: Rng>(
    e: &Array2<T>,
    block: &BlockWeights<T>,
    n_heads: usize,
    mask: &[u8],
    dropout: &mut Option<(&mut R, f64)>,
) -> Result<(Array2<T>, BlockTrace<T>)> {
    let (q, k, v, probs, concat) = mha_parts(e, block, n_heads, mask)?;
    let mut attn_out = concat.dot(&block.w_o);
    let attn_dropout = dropout.as_mut().map(|(rng, rate)| {
        let m = dropout_mask(attn_out.dim(), *rate, *rng);
        attn_out *= &m;
        m
    });
    let (ln1_xhat, ln1_inv_std) = normalize_rows(&(e + &attn_out));
    let mut ln1_out = ln1_xhat.clone();
    scale_shift(&mut ln1_out, block.ln1_gain.view(), block.ln1_bias.view());

    let ff_pre = block.ff1.forward(&ln1_out);
    let ff_act = relu(&ff_pre);
    let mut ff_out = block.ff2.forward(&ff_act);
    let ff_dropout = dropout.as_mut().map(|(rng, rate)| {
        let m = dropout_mask(ff_out.dim(), *rate, *rng);
        ff_out *= &m;
        m
    });
    let (ln2_xhat, ln2_inv_std) = normalize_rows(&(&ln1_out + &ff_out));
    let mut out = ln2_xhat.clone();
    scale_shift(&mut out, block.ln2_gain.view(), block.ln2_bias.view());

    let trace = BlockTrace {
        input: e.clone(),
        q,
        k,
        v,
        probs,
        concat,
        attn_dropout,
        ln1_xhat,
        ln1_inv_std,
        ln1_out,
        ff_pre,
        ff_act,
        ff_dropout,
        ln2_xhat,
        ln2_inv_std,
    };
    Ok((out, trace))
}

type HeadOutput<T> = (Prediction<T>, Vec<Array2<T>>, Vec<Array2<T>>);

fn head_forward<T: Scalar>(
    head: &[Linear<T>],
    hidden: &Array2<T>,
    d_model: usize,
) -> Result<HeadOutput<T>> {
    if hidden.nrows() == 0 || hidden.ncols() != d_model {
        return Err(Error::ShapeMismatch(format!(
            "hidden state {:?} incompatible with d_model {d_model}",
            hidden.dim()
        )));
    }
    let mut x = hidden.slice(s![0..1, ..]).to_owned();
    let mut inputs = Vec::with_capacity(head.len());
    let mut pre = Vec::with_capacity(head.len());
    for (l, layer) in head.iter().enumerate() {
        if layer.weight.nrows() != x.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "head layer {l} expects width {}, got {}",
                layer.weight.nrows(),
                x.ncols()
            )));
        }
        let z = layer.forward(&x);
        inputs.push(x);
        x = if l + 1 < head.len() { relu(&z) } else { z.clone() };
        pre.push(z);
    }
    if x.ncols() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "head produces {} logits, expected 2",
            x.ncols()
        )));
    }
    let logits = [x[[0, 0]], x[[0, 1]]];
    let prediction = Prediction {
        logits,
        prob: ops::prob_of_positive(logits),
    };
    Ok((prediction, inputs, pre))
}
