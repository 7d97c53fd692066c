use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: value {value} lies outside [{lower}, {upper}]")]
    OutOfRange {
        row: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("infeasible constraint set")]
    Infeasible,

    #[error("model payload: {0}")]
    Format(String),

    #[error("iteration {iteration}, learner `{learner}`: {source}")]
    AtIteration {
        iteration: usize,
        learner: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular(_) | Error::NotConverged(_) | Error::Infeasible => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
