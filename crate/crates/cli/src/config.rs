//! TOML run configuration shared by `train`, `ablate` and `grad-check`.
//!
//! ```toml
//! [paths]
//! dataset = "corpus.jsonl"      # JSONL input; omit to generate from [corpus]
//! vocab = "vocab.txt"           # loaded if it exists, else built and written here
//! checkpoint = "model.ckpt"
//! report = "train_report.json"
//! test_split = "test.jsonl"     # held-out side of [split], written by `train`
//!
//! [model]
//! preset = "bert-like"          # or "distilbert-like", "toy"
//! n_fc_layers = 2               # any ModelConfig field overrides the preset
//!
//! [train]
//! learning_rate = 0.05
//! batch_size = 8
//! epochs = 20
//! seed = 0
//! per_class_samples = 400
//! precision = "single"          # or "double"
//!
//! [preprocess]
//! max_lines = 265
//!
//! [split]
//! train_fraction = 0.8
//! seed = 0
//!
//! [corpus]                      # synthetic generator settings
//! n_programs = 1000
//!
//! [grad_check]
//! seq_len = 6
//! batch = 4
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use irvuln::corpus::{CorpusSpec, SplitSpec};
use irvuln::preprocess::PreprocessConfig;
use irvuln::train::TrainConfig;
use irvuln::{ModelConfig, Preset};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub test_split: Option<PathBuf>,
}

/// Preset plus optional per-field overrides.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_len: Option<usize>,
    pub n_fc_layers: Option<usize>,
    pub fc_hidden: Option<usize>,
    pub dropout_rate: Option<f64>,
}

fn default_preset() -> Preset {
    Preset::BertLike
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: default_preset(),
            d_model: None,
            n_heads: None,
            n_layers: None,
            d_ff: None,
            max_len: None,
            n_fc_layers: None,
            fc_hidden: None,
            dropout_rate: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, vocab_size: usize) -> ModelConfig {
        let mut cfg = ModelConfig::preset(self.preset, vocab_size);
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        apply!(d_model, n_heads, n_layers, d_ff, max_len, n_fc_layers, fc_hidden, dropout_rate);
        cfg
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub seq_len: usize,
    pub batch: usize,
    pub seed: u64,
    /// Vocabulary size of the random inputs.
    pub vocab_size: usize,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        GradCheckSection {
            seq_len: 6,
            batch: 4,
            seed: 0,
            vocab_size: 16,
            eps: irvuln::train::gradcheck::DEFAULT_EPS,
            tolerance: irvuln::train::gradcheck::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub split: Option<SplitSpec>,
    pub corpus: Option<CorpusSpec>,
    pub grad_check: GradCheckSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.dataset,
            &mut cfg.paths.vocab,
            &mut cfg.paths.checkpoint,
            &mut cfg.paths.report,
            &mut cfg.paths.test_split,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(d) = &cfg.paths.dataset {
            if !d.exists() {
                bail!("dataset {} does not exist", d.display());
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [model]
            preset = "distilbert-like"
            n_fc_layers = 3
            [train]
            epochs = 2
            precision = "double"
            "#,
        )
        .unwrap();
        let m = cfg.model.resolve(50);
        assert_eq!(m.n_layers, 2);
        assert_eq!(m.n_fc_layers, 3);
        assert_eq!(m.vocab_size, 50);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.learning_rate, 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nlr = 1.0\n").is_err());
    }
}
