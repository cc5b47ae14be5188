use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("softmax row {row} is fully masked")]
    AllMaskedRow { row: usize },

    #[error("backward requires a scalar output, got {len} elements")]
    NonScalarOutput { len: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("token {token} out of range for vocab {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("unknown component {0}")]
    UnknownComponent(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("evaluation set empty after gap-floor filtering ({excluded} inputs excluded)")]
    EmptyEvalSet { excluded: usize },

    #[error("degenerate denominator in {0}")]
    DegenerateDenominator(&'static str),

    #[error("component {0} has no forward path to the readout")]
    NoPathToReadout(String),

    #[error("training did not converge: {0}")]
    NonConvergence(String),

    #[error("overlapping parameter slices: {0}")]
    OverlappingSlices(String),

    #[error("set size mismatch: {a} vs {b}")]
    SetSizeMismatch { a: usize, b: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {path} ({hint})")]
    MissingArtifact { path: String, hint: String },

    #[error("config hash mismatch: {0}")]
    HashMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
