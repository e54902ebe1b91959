use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected} values, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-positive input at index {index}: {value}")]
    NonPositiveInput { index: usize, value: f64 },

    #[error("degenerate share at index {index}: {value}")]
    DegenerateShare { index: usize, value: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {last_residual:e})")]
    NoConvergence {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("step collapse at t = {t}: step size fell below {dt_floor:e}")]
    StepCollapse { t: f64, dt_floor: f64 },

    #[error("no-black-hole condition 1/(1-mu) < sigma violated (mu = {mu}, sigma = {sigma})")]
    NoBlackHoleViolated { mu: f64, sigma: f64 },

    #[error("growth-rate window too short: {usable} usable snapshots, need at least {required}")]
    WindowTooShort { usable: usize, required: usize },

    #[error("Fourier mode k = 0 carries no perturbation and is not admissible")]
    ZeroMode,
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag, used for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonPositiveInput { .. } => "non_positive_input",
            Error::DegenerateShare { .. } => "degenerate_share",
            Error::NoConvergence { .. } => "no_convergence",
            Error::StepCollapse { .. } => "step_collapse",
            Error::NoBlackHoleViolated { .. } => "no_black_hole_violated",
            Error::WindowTooShort { .. } => "window_too_short",
            Error::ZeroMode => "zero_mode",
        }
    }
}
