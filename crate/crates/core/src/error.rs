use thiserror::Error;

/// Errors raised by the model, estimation and control routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Euler transform is singular at pitch {theta} rad (|cos(theta)| < 1e-6)")]
    GimbalSingularity { theta: f64 },

    #[error("friction line undefined for Reynolds number {0} (requires Re > 100)")]
    ReynoldsDomain(f64),

    #[error("combined mass matrix entry {index} is {value}, must be positive")]
    SingularMass { index: usize, value: f64 },

    #[error("requested force {force} N exceeds the {limit} N available at saturation")]
    InfeasibleThrust { force: f64, limit: f64 },

    #[error("wrench not attainable by the actuator set (residual {residual:.3e})")]
    UnattainableWrench { residual: f64 },

    #[error("direction cosine along the test axis is zero for {0}")]
    UnobservableAxis(String),

    #[error("design matrix is rank deficient in column `{column}`")]
    RankDeficient { column: &'static str },

    #[error("variance of {0} is zero, correlation undefined")]
    UndefinedVariance(&'static str),

    #[error("vehicle coincides with waypoint, line-of-sight angle undefined")]
    CoincidentPoint,

    #[error("time bases differ: {0}")]
    TimebaseMismatch(String),

    #[error("state became non-finite at t = {t} s")]
    NonFinite { t: f64 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
