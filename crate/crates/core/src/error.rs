use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty identifier")]
    EmptyId,
    #[error("duplicate assignee `{0}`")]
    DuplicateAssignee(String),
    #[error("duplicate query `{0}`")]
    DuplicateQuery(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing query `{0}`")]
    MissingQuery(String),
    #[error("non-finite value at assignee `{assignee}`, query `{query}`")]
    NonFiniteValue { assignee: String, query: String },
    #[error("negative true count {value} at assignee `{assignee}`, query `{query}`")]
    NegativeTrueCount {
        assignee: String,
        query: String,
        value: f64,
    },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("ordering lit <= lep <= vac violated at assignee `{0}`")]
    OrderingViolation(String),
    #[error("domain error: {0}")]
    DomainError(String),

    #[error("total population is zero")]
    ZeroTotalPopulation,
    #[error("quota of assignee {0} is not strictly positive")]
    ZeroQuota(usize),

    #[error("rejection sampler exceeded {0} attempts")]
    SamplingExhausted(usize),
    #[error(
        "inflated denominator is not positive ({0}); delta/epsilon too aggressive for this data"
    )]
    NonPositiveDenominator(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}: line {line}: schema mismatch: {msg}")]
    SchemaMismatch {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}: line {line}: {source}")]
    Row {
        path: PathBuf,
        line: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonPositiveDenominator(_)
            | Error::SamplingExhausted(_)
            | Error::ZeroTotalPopulation => 3,
            Error::Row { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
