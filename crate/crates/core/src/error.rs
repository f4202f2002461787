use crate::groups::GroupId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("group mismatch: expected {expected}, found {found}")]
    GroupMismatch { expected: GroupId, found: GroupId },

    #[error("type error: {0}")]
    Type(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("numerically unstable solve: {0}")]
    Instability(String),

    #[error("incomplete decomposition: residual dimension {residual} of {dim}")]
    IncompleteDecomposition { residual: usize, dim: usize },

    #[error("unsupported degree {degree} (maximum {max})")]
    UnsupportedDegree { degree: u32, max: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("training diverged (seed {seed}, step {step}): {reason}")]
    Training { seed: u64, step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub(crate) fn ty(msg: impl Into<String>) -> Self {
        Error::Type(msg.into())
    }

    pub(crate) fn check_group(expected: GroupId, found: GroupId) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::GroupMismatch { expected, found })
        }
    }
}
