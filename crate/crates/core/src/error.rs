use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("relative error undefined: target correlation is the all-one matrix")]
    DegenerateTarget,

    #[error("zero current sub-vector at stage {stage}, unit {unit}, state {state}")]
    ZeroSubVector {
        stage: usize,
        unit: usize,
        state: usize,
    },

    #[error("stage transmission block {block} has norm {norm} (expected 1)")]
    NonUnitBlock { block: usize, norm: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("inner network singular at {freq_hz} Hz for switch state {state} (condition number {cond:e})")]
    SingularReduction {
        freq_hz: f64,
        state: String,
        cond: f64,
    },

    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("permutation is not an involution on {0} elements")]
    NotInvolution(usize),

    #[error("touchstone: {0}")]
    Touchstone(String),

    #[error("correlation matrix invalid: {0}")]
    InvalidCorrelation(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
