use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: expected d={expected_dim}, n={expected_n}, found d={found_dim}, n={found_n}")]
    GridMismatch {
        expected_dim: usize,
        expected_n: usize,
        found_dim: usize,
        found_n: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown preset or potential `{0}`")]
    UnknownPreset(String),

    #[error("cannot parse expression `{input}`: {reason}")]
    Expression { input: String, reason: String },

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("blow-up at step {step}: |X|_H = {norm:.3e} exceeds guard {limit:.3e}")]
    BlowUp { step: usize, norm: f64, limit: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {format}: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("missing constant: {0}")]
    MissingConstant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
