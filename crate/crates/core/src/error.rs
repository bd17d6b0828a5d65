use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers that map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// An input violates a documented precondition or invariant.
    Input,
    /// A numerical procedure failed or lost the mass/precision it promised.
    Numeric,
    /// A simulation exceeded a resource cap.
    Resource,
    /// Reading or writing an external file failed.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid tail curve: {0}")]
    InvalidCurve(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate offspring law: {0}")]
    Degenerate(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("window overflow: {0}")]
    WindowOverflow(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain(_)
            | Error::InvalidCurve(_)
            | Error::Invalid(_)
            | Error::Degenerate(_)
            | Error::Infeasible(_) => ErrorKind::Input,
            Error::WindowOverflow(_) | Error::Numeric(_) => ErrorKind::Numeric,
            Error::Resource(_) => ErrorKind::Resource,
            Error::Iteration { source, .. } => source.kind(),
            Error::Io(_) => ErrorKind::Io,
            Error::Csv(e) => {
                if e.is_io_error() {
                    ErrorKind::Io
                } else {
                    ErrorKind::Input
                }
            }
            Error::Json(_) => ErrorKind::Input,
        }
    }
}
