use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("unknown mode label `{0}`")]
    UnknownLabel(String),

    #[error("duplicate mode label `{0}`")]
    DuplicateLabel(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("L^(1)_0 = 1 has no root; a target of M = 0 needs no calibration")]
    NoRoot,

    #[error("calibration failed: {}", .0.join("; "))]
    Calibration(Vec<String>),

    #[error("negative rate {rate} for {what}")]
    NegativeRate { what: &'static str, rate: f64 },

    #[error("initial state violates the Fock-support constraint: {0}")]
    SupportConstraint(String),

    #[error(
        "step size underflow at t = {t} (h = {h:e}); the problem is too stiff for \
         explicit integration, use the steady-state solver instead"
    )]
    Stiffness { t: f64, h: f64 },

    #[error(
        "steady state not reached by t = {t}: residual {residual:e}, \
         slowest decay rate estimate {slowest_rate:e}"
    )]
    NonConvergence {
        t: f64,
        residual: f64,
        slowest_rate: f64,
    },

    #[error("Wigner grid too small: {reason}; try an extent of at least {suggested_extent:.3}")]
    GridTooSmall {
        reason: String,
        suggested_extent: f64,
    },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error("{0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
