use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    /// Depth of the classification head; 1 means a single affine map.
    pub n_fc_layers: usize,
    /// Width of the intermediate head layers (unused when `n_fc_layers == 1`).
    pub fc_hidden: usize,
    pub dropout_rate: f64,
}

/// Named architecture presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    BertLike,
    DistilbertLike,
    Toy,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bert-like" => Ok(Preset::BertLike),
            "distilbert-like" => Ok(Preset::DistilbertLike),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        match preset {
            Preset::BertLike => ModelConfig {
                vocab_size,
                d_model: 128,
                n_heads: 4,
                n_layers: 4,
                d_ff: 256,
                max_len: 512,
                n_fc_layers: 1,
                fc_hidden: 64,
                dropout_rate: 0.1,
            },
            Preset::DistilbertLike => ModelConfig {
                n_layers: 2,
                ..ModelConfig::preset(Preset::BertLike, vocab_size)
            },
            Preset::Toy => ModelConfig {
                vocab_size,
                d_model: 8,
                n_heads: 2,
                n_layers: 1,
                d_ff: 16,
                max_len: 512,
                n_fc_layers: 1,
                fc_hidden: 8,
                dropout_rate: 0.0,
            },
        }
    }

    pub fn bert_like(vocab_size: usize) -> Self {
        Self::preset(Preset::BertLike, vocab_size)
    }

    pub fn distilbert_like(vocab_size: usize) -> Self {
        Self::preset(Preset::DistilbertLike, vocab_size)
    }

    pub fn toy(vocab_size: usize) -> Self {
        Self::preset(Preset::Toy, vocab_size)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// (fan_in, fan_out) of each classification-head layer.
    pub fn head_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.n_fc_layers);
        let mut width = self.d_model;
        for _ in 1..self.n_fc_layers {
            shapes.push((width, self.fc_hidden));
            width = self.fc_hidden;
        }
        shapes.push((width, 2));
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("n_fc_layers", self.n_fc_layers),
            ("fc_hidden", self.fc_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::OddDimension(self.d_model));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
