use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("degenerate sample: need at least {needed} values, got {got}")]
    DegenerateSample { needed: usize, got: usize },

    #[error("non-finite value in sample")]
    NonFinite,

    #[error("invalid weight function: {0}")]
    InvalidWeightFunction(String),

    #[error("invalid delivery window: {0}")]
    InvalidDeliveryWindow(String),

    #[error("children do not partition parent: {0}")]
    NotAPartition(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("infeasible fixing: {0}")]
    InfeasibleFixing(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid fit config: {0}")]
    InvalidConfig(String),

    #[error("rank-deficient weighted design")]
    RankDeficient,

    #[error("zero parent price in case {0}")]
    ZeroParentPrice(String),

    #[error("nonpositive weighted slope sum {0}")]
    NonPositiveSlopeSum(f64),

    #[error("level `{level}` is arbitrage-violating (max gap {gap:e} > {tolerance:e})")]
    ArbitrageViolation { level: String, gap: f64, tolerance: f64 },

    #[error("no shaping path to {0}")]
    NoShapingPath(String),

    #[error("missing coefficients for `{key}` in level `{level}`")]
    MissingCoefficients { level: String, key: String },

    #[error("invalid contract code `{0}`")]
    InvalidContract(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: duplicate quote for {date} {period}")]
    DuplicateQuote { line: u64, date: NaiveDate, period: String },

    #[error("no joint observations")]
    NoJointObservations,

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("cannot open {path}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient
                | Error::ArbitrageViolation { .. }
                | Error::NonPositiveSlopeSum(_)
                | Error::InfeasibleFixing(_)
        )
    }
}
