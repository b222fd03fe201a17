use thiserror::Error;

use crate::qtt::QttVector;
use crate::tt_cross::CrossReport;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("size guard: {what} = {size} exceeds the limit {limit}")]
    Size {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("near-singular core matrix (condition estimate {cond:.3e})")]
    NearSingularCore { cond: f64 },

    #[error("grid point {index} (t = {t}): {source}")]
    AtGridPoint {
        index: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("shift t = {t} lies outside the family span [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("separation rank exceeded the cap {cap}; achieved relative error {achieved:.3e}")]
    RankOverflow { cap: usize, achieved: f64 },

    #[error("length {len} is not a power of {q}")]
    Length { len: usize, q: usize },

    #[error("index {index} out of range 1..={len}")]
    Range { index: usize, len: usize },

    #[error("evaluation budget of {budget} calls exhausted before convergence")]
    BudgetExhausted {
        budget: usize,
        best: Option<Box<(QttVector<f64>, CrossReport)>>,
    },

    #[error("cross rank cap {cap} reached without convergence; estimated error {achieved:.3e}")]
    RankCap {
        cap: usize,
        achieved: f64,
        best: Box<(QttVector<f64>, CrossReport)>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_grid_point(self, index: usize, t: f64) -> Self {
        Error::AtGridPoint {
            index,
            t,
            source: Box::new(self),
        }
    }
}
