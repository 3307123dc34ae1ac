use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} lies outside the model window [0, {horizon}]")]
    TimeOutOfWindow { t: f64, horizon: f64 },

    #[error("sphere has collapsed at t = {t} (conformal factor {factor})")]
    Collapsed { t: f64, factor: f64 },

    #[error("point {point:?} lies outside the chart: {reason}")]
    OutsideChart { point: Vec<f64>, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("unsupported model for this operation: {0}")]
    UnsupportedModel(String),

    #[error("positivity lost at node {node} (t = {t}, x = {x:?}): u = {value}")]
    PositivityLoss {
        node: usize,
        t: f64,
        x: Vec<f64>,
        value: f64,
    },

    #[error("time step violates the max-principle bound: ratio {ratio} > 1")]
    StabilityViolation { ratio: f64 },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("region `{0}` contains no grid nodes")]
    EmptyRegion(String),

    #[error("applicability mask for `{0}` is empty")]
    EmptyMask(String),

    #[error("curvature certificate missing or insufficient: {0}")]
    MissingCertificate(String),

    #[error("step too large: {0}")]
    StepTooLarge(String),

    #[error("non-integrable coefficient profile: {0}")]
    NonIntegrable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
