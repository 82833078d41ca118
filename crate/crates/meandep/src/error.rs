//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, estimation, and prediction.
#[derive(Debug, Error)]
pub enum Error {
    /// A site set violated a structural invariant.
    #[error("invalid site set: {0}")]
    InvalidSites(String),

    /// A design matrix requires elevation but a site has none.
    #[error("predictor set {0} requires elevation at every site")]
    MissingElevation(String),

    /// The design matrix is not of full column rank.
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    /// A CSV input could not be parsed.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// Square-root transform requested on a negative observation.
    #[error("negative value {value} at {path}:{line} cannot be square-root transformed")]
    NegativeValueUnderSqrt {
        path: String,
        line: u64,
        value: f64,
    },

    /// An observation references a station absent from the station file.
    #[error("unknown station id `{0}` in observations")]
    UnknownStationId(String),

    /// More folds requested than sites available.
    #[error("cannot split {n} sites into {k} folds")]
    KTooLarge { k: usize, n: usize },

    /// An observation panel violated a structural invariant.
    #[error("invalid observation panel: {0}")]
    InvalidPanel(String),

    /// Covariance parameters violated a structural invariant.
    #[error("invalid covariance parameters: {0}")]
    InvalidParams(String),

    /// A covariance matrix failed to factorize even after the jitter schedule.
    #[error("matrix not positive definite{}", day_context(.day))]
    NotPositiveDefinite { day: Option<usize> },

    /// A linear system in the GLS solve was singular.
    #[error("singular system in generalized least squares solve")]
    SingularSystem,

    /// The optimizer found no finite objective value at or around the start.
    #[error("optimizer found no improvement from the starting point")]
    NoImprovement,

    /// Two fits passed to the likelihood-ratio test are not nested.
    #[error("fits are not nested: {0}")]
    NotNested(String),

    /// Fewer usable days than the operation needs.
    #[error("needs at least 2 usable days, got {0}")]
    MTooSmall(usize),

    /// A day had too few observed sites for a per-day fit.
    #[error("day {day} has only {observed} observed sites (need >= {need})")]
    DayTooSmall {
        day: usize,
        observed: usize,
        need: usize,
    },

    /// A configuration value failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Dimensions of two inputs do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An I/O failure while reading input files.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn day_context(day: &Option<usize>) -> String {
    match day {
        Some(d) => format!(" (day index {d})"),
        None => String::new(),
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
