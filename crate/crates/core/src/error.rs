use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("YAML error: {0}")]
    Yaml(#[from] serde_yaml::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(String),

    #[error("empty document")]
    EmptyDocument,

    #[error("duplicate label name '{0}'")]
    DuplicateLabel(String),

    #[error("cycle detected through '{0}'")]
    Cycle(String),

    #[error("child listed under two parents: '{child}' under '{first}' and '{second}'")]
    MultipleParents {
        child: String,
        first: String,
        second: String,
    },

    #[error("malformed hierarchy: {0}")]
    MalformedHierarchy(String),

    #[error("unknown label '{0}'")]
    UnknownLabel(String),

    #[error("label '{0}' is not a leaf")]
    NotALeaf(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed")]
    TapeConsumed,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("missing parameter '{0}'")]
    MissingParameter(String),

    #[error("parameter name-set mismatch: {0}")]
    NameMismatch(String),

    #[error("zero-norm row {0}")]
    ZeroNorm(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no positive targets")]
    NoPositives,

    #[error("no leaf labels{0}")]
    NoLeafLabels(String),

    #[error("malformed manifest row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} in branch {branch} (max |activation| = {max_activation})")]
    Diverged {
        step: usize,
        branch: String,
        max_activation: f64,
    },
}

impl Error {
    /// Process exit code used by the command-line front end:
    /// 1 for I/O, 3 for numeric failure, 2 for everything that is a validation problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Image(_) => 1,
            Error::NonFinite(_) | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
