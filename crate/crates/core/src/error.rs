use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument lies outside the admissible domain.
    #[error("{family}: {detail}")]
    Domain { family: String, detail: String },

    /// An iterative routine failed to converge.
    #[error("numerical failure in {context} (residual {residual:e})")]
    Numerical { context: String, residual: f64 },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("model evaluation failed at sample {sample}: {message}")]
    Model { sample: usize, message: String },

    #[error("optimization failed in phase {phase} at iteration {iteration}: {message}")]
    Optimization {
        phase: usize,
        iteration: usize,
        message: String,
    },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(family: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Domain {
            family: family.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn numerical(context: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            context: context.into(),
            residual,
        }
    }
}
