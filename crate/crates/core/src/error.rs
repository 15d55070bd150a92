use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector cannot be normalized to the unit sphere: {0:?}")]
    NotNormalizable([f64; 3]),

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel evaluated at its singular point")]
    Singular,

    #[error("probe {probe:?} coincides with particle center {index}")]
    ProbeAtCenter { probe: [f64; 3], index: usize },

    #[error("direction is not tangent to the orientation (|t.xi| = {0:e})")]
    NotTangent(f64),

    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },

    #[error("assumption {assumption} violated: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unbalanced masses: {0} vs {1}")]
    Unbalanced(f64, f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for violations of the modelling assumptions (as opposed to
    /// numerical breakdown or I/O).
    pub fn is_assumption(&self) -> bool {
        matches!(self, Error::Assumption { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
