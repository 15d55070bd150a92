use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] suspension_core::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// 2 for violated modelling assumptions, 3 for numerical failures,
    /// 1 for everything else (bad configuration, I/O).
    pub fn exit_code(&self) -> i32 {
        use suspension_core::Error as E;
        match self {
            HarnessError::Core(E::Assumption { .. }) => 2,
            HarnessError::Core(
                E::NonFinite(_) | E::Numerical(_) | E::Singular | E::Unbalanced(..) | E::NotNormalizable(_),
            ) => 3,
            HarnessError::ChecksFailed { .. } => 3,
            _ => 1,
        }
    }
}
