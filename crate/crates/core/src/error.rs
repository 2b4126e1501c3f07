use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the layer that raises
/// them; the CLI maps them onto exit codes (user error vs. internal bug).
#[derive(Debug, Error)]
pub enum Error {
    // ── graph construction / backward ──
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: invalid shape {shape:?}, expected {expected}")]
    InvalidShape {
        op: &'static str,
        shape: (usize, usize),
        expected: &'static str,
    },
    #[error("backward requires a scalar loss node, got shape {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("backward already ran on this tape; build a new forward pass first")]
    BackwardAlreadyRun,
    #[error("loss function is not deterministic: two evaluations gave {first} and {second}")]
    NondeterministicLoss { first: f64, second: f64 },
    #[error("{context}: non-finite value encountered")]
    NonFinite { context: &'static str },

    // ── model construction / use ──
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("relation id {id} out of range for {count} relations")]
    RelationOutOfRange { id: usize, count: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("{field}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("invalid configuration: {msg}")]
    InvalidConfig { msg: String },

    // ── inference ──
    #[error("exact enumeration needs {states:.0} relation sequences, over the {limit:.0} cap; use the SMC sampler instead")]
    EnumerationTooLarge { states: f64, limit: f64 },
    #[error("all particles have zero weight at sentence {step}; the model assigns the document probability 0")]
    AllParticlesImpossible { step: usize },

    // ── corpus / files ──
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown relation label {name:?}")]
    UnknownLabel { name: String },
    #[error("{path}:{line}: {msg}")]
    CorpusParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("metrics: {msg}")]
    Metrics { msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// true for errors caused by user input (bad files, bad config, bad
    /// dimensions) rather than internal invariant violations.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite { .. }
                | Error::BackwardAlreadyRun
                | Error::NonScalarLoss { .. }
                | Error::NondeterministicLoss { .. }
        )
    }
}
