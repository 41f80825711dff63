//! Vulnerability detection for LLVM IR programs with a transformer encoder
//! trained from scratch.
//!
//! The pipeline is: [`preprocess`] raw programs, build a [`tokenizer`]
//! vocabulary, [`train`] a [`model::TransformerModel`] with SGD, then
//! [`eval`]uate it or run the classifier-head depth ablation.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod preprocess;
pub mod program;
pub mod scalar;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, Preset, Prediction, TransformerModel};
pub use program::IrProgram;
pub use scalar::{DType, Scalar};

/// Single-precision model, the default for training runs.
pub type Model32 = TransformerModel<f32>;
/// Double-precision model, used for gradient checks and bit-exact
/// reproducibility tests.
pub type Model64 = TransformerModel<f64>;
