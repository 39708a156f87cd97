use thiserror::Error;

/// Errors raised by the laboratory. Variants map onto the precondition
/// failures of the individual modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("degenerate equation family: k + l = {0} must exceed 1")]
    DegenerateFamily(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient nonlinearity regularity: m0 = {m0} < floor((n+2)/2) = {needed}")]
    InsufficientRegularity { m0: i64, needed: i64 },

    #[error("step size underflow at t = {t} (bracket [{t_lo}, {t_hi}])")]
    StepUnderflow { t: f64, t_lo: f64, t_hi: f64 },

    #[error("no blow-up: the velocity tail is not integrable for these parameters")]
    NoBlowup,

    #[error("requested time {t} lies beyond the lifespan {t_max} of the trajectory")]
    BeyondLifespan { t: f64, t_max: f64 },

    #[error("moment condition violated: order s = {s} needs {required} vanishing moments, field has {found}")]
    MomentConditionViolated { s: f64, required: usize, found: usize },

    #[error("support [{lo}, {hi}] leaves the admissible band [{band_lo}, {band_hi}]; enlarge the domain length")]
    SupportOverflow { lo: f64, hi: f64, band_lo: f64, band_hi: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numerical instability at t = {t}: {detail}")]
    Instability { t: f64, detail: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("parameters too coarse: lambda = {lambda} exceeds gamma = {gamma}; use a smaller gamma or a larger gap s_c - s")]
    LambdaTooLarge { lambda: f64, gamma: f64 },

    #[error("need at least {needed} points to fit, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("at sweep point {label}: {source}")]
    SweepPoint { label: String, source: Box<LabError> },

    #[error("i/o error: {0}")]
    Io(String),
}

impl LabError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn at_point(self, label: impl Into<String>) -> Self {
        LabError::SweepPoint { label: label.into(), source: Box::new(self) }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
