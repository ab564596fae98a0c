use thiserror::Error;

/// A parameter failed range validation.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct ParamError {
    pub field: &'static str,
    pub message: String,
}

impl ParamError {
    pub(crate) fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid feedback configuration: {0}")]
    InvalidConfig(#[from] ParamError),
    #[error("out-of-order event at t={t:e} s (last processed t={last:e} s)")]
    OutOfOrder { t: f64, last: f64 },
    #[error("photon timestamps are not sorted at index {index}")]
    Unsorted { index: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(#[from] ParamError),
    #[error("no dynamics from the bleached state")]
    Bleached,
    #[error("horizon must be > 0, got {0}")]
    BadHorizon(f64),
    #[error("simulation stalled at t={t:e} s: zero total rate and nothing scheduled")]
    Stalled { t: f64 },
    #[error(
        "aggregation guard violated: k_isc = {k_isc:e}/s is not < 1% of k_exc + k_fl = {sum:e}/s; use the exact path"
    )]
    AggregationGuard { k_isc: f64, sum: f64 },
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("sample contains a non-finite or negative value")]
    InvalidValue,
    #[error("ks test needs at least 4 values per sample (got {a} and {b})")]
    TooFewForKs { a: usize, b: usize },
    #[error("without-feedback median is zero, gain ratio undefined")]
    ZeroMedian,
    #[error("{0} must be > 0")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("n_molecules must be >= 1")]
    NoMolecules,
    #[error("invalid lifetime distribution: {0}")]
    Lifetime(String),
    #[error("molecule {index}: {source}")]
    Simulation {
        index: usize,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}
