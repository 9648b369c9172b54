use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("factorization failed: zero pivot at index {0}")]
    ZeroPivot(usize),

    #[error("conjugate gradient breakdown after restart (iteration {0})")]
    CgBreakdown(usize),

    #[error("linear solve failed at ADMM iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("oracle refused: {0}")]
    OracleRefused(String),

    #[error("policy error in head {head}: {msg}")]
    Policy { head: String, msg: String },

    #[error("weight file error: {0}")]
    Weights(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("nlp evaluator `{0}` returned a non-finite value")]
    Evaluator(String),

    #[error("{0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
