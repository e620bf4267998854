use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("malformed survival curve: {0}")]
    MalformedCurve(&'static str),
    #[error("time {t} is outside [0, {tau}]")]
    TimeOutOfRange { t: f64, tau: f64 },
    #[error("visit length must be positive, got {0}")]
    NonPositiveVisitLength(f64),
    #[error("no observation carries positive weight")]
    EmptySample,
    #[error("weights must be finite and non-negative")]
    InvalidWeight,
    #[error("insufficient event mass{}: have {available:.3}, need {required:.3}", stratum_label(*.stratum))]
    InsufficientEvents {
        available: f64,
        required: f64,
        stratum: Option<usize>,
    },
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("action {action} is outside the action domain of size {n_actions}")]
    UnknownAction { action: usize, n_actions: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cutpoint {cut} must lie strictly inside (0, {tau}) and cutpoints must increase")]
    InvalidCutpoint { cut: f64, tau: f64 },
    #[error("stratum {requested} was requested by stratum {current} before it was finalized")]
    Sequencing { current: usize, requested: usize },
    #[error("patient {patient}, visit {k}: {reason}")]
    InvalidRecord { patient: u64, k: usize, reason: String },
    #[error("no test trajectory matches the policy with positive weight")]
    NoMatchingTrajectories,
    #[error("stratum {stratum}, iteration {iteration}: {source}")]
    Fit {
        stratum: usize,
        iteration: usize,
        source: Box<Error>,
    },
}

fn stratum_label(stratum: Option<usize>) -> String {
    match stratum {
        Some(l) => alloc::format!(" in stratum {l}"),
        None => String::new(),
    }
}
