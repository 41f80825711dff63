use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("program `{id}`: `define` at line {line} has no matching closing brace")]
    MalformedFunctionBlock { id: String, line: usize },

    #[error("program `{id}`: removed wrapper line {line} carries a vulnerable label")]
    LabelOnRemovedLine { id: String, line: usize },

    #[error("program `{id}`: {reason}")]
    InvalidProgram { id: String, reason: String },

    #[error("corpus contains no tokens")]
    EmptyCorpus,

    #[error("malformed token sequence: {0}")]
    MalformedSequence(String),

    #[error("malformed vocabulary file: {0}")]
    MalformedVocabulary(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },

    #[error("positional encoding requires an even model width, got {0}")]
    OddDimension(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient in `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("class {0} has no members")]
    EmptyClass(u8),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("split leaves one side empty ({train} train / {test} test)")]
    DegenerateSplit { train: usize, test: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ablation failed at depth {depth}, run {run}: {source}")]
    Ablation {
        depth: usize,
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    InvariantViolation { line: usize, message: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
