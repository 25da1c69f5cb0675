use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("state became non-finite at t = {time} (step {step})")]
    BlowUp { time: f64, step: u64 },

    #[error("semi-implicit Newton solve did not converge (residual {residual:e} after {iterations} iterations)")]
    NewtonDivergence { residual: f64, iterations: usize },

    #[error("grid covers only {inside_fraction:.4} of the measure points (need >= {required})")]
    Coverage { inside_fraction: f64, required: f64 },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("output directory {dir} holds artifacts from config {existing}, current config is {current}; pass --force to overwrite")]
    HashMismatch {
        dir: String,
        existing: String,
        current: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
