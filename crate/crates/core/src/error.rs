use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("training sample has no task id")]
    MissingTaskId,

    #[error("memory buffer is empty")]
    EmptyMemory,

    #[error("memory buffer has {have} entries, need at least {need}")]
    NotEnoughEntries { have: usize, need: usize },

    #[error("entry {0} is not in the memory buffer")]
    UnknownEntry(usize),

    #[error("performance matrix row {0} is incomplete")]
    IncompleteRow(usize),

    #[error("infeasible stream configuration: {0}")]
    InfeasibleStream(String),

    #[error("training aborted at {step}: {source}")]
    Training {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at(step: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Training {
            step,
            source: Box::new(source),
        }
    }
}
