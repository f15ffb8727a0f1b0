use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),

    #[error("variable `{0}` has an empty domain")]
    EmptyDomain(String),

    #[error("causal graph has a cycle through `{0}`")]
    Cycle(String),

    #[error("missing value for exogenous variable `{0}`")]
    MissingInput(String),

    #[error("value {value} is outside the domain of `{variable}`")]
    OutOfDomain { variable: String, value: i64 },

    #[error("invalid mechanism for `{variable}`: {reason}")]
    InvalidMechanism { variable: String, reason: String },

    #[error("invalid site: {0}")]
    InvalidSite(String),

    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),

    #[error("input {index} is not task-correct under the low-level model")]
    IncorrectInput { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("graph has {0} nodes; exhaustive search supports at most {1}")]
    GraphTooLarge(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
