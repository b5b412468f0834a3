use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("newton iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian at newton iteration {iteration}; the branch may have a fold here")]
    SingularJacobian { iteration: usize },

    #[error("eigen-solver failure: {0}")]
    Backend(String),

    #[error("quadratic fit of the critical curve is poor (relative residual {relative_residual:.3e})")]
    FitQuality { relative_residual: f64 },

    #[error("solution blew up at t = {time:.4} (max modulus {max_modulus:.3e})")]
    BlowUp { time: f64, max_modulus: f64 },

    #[error("coordinate change is not invertible: sup |gamma_x| = {sup_gx:.4} >= 1")]
    NonInvertible { sup_gx: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (defect {defect:.3e})")]
    FixedPoint { iterations: usize, defect: f64 },

    #[error("phase undefined: sup |psi - phi| = {deviation:.3e} exceeds threshold {threshold:.3e}")]
    PhaseUndefined { deviation: f64, threshold: f64 },

    #[error("extracted phase is too steep: sup |gamma_x| = {sup_gx:.4}")]
    SteepPhase { sup_gx: f64 },

    #[error("wavenumber {requested:.6} outside continued family range [{min:.6}, {max:.6}]")]
    Extrapolation { requested: f64, min: f64, max: f64 },

    #[error("insufficient snapshot resolution: {0}")]
    Resolution(String),

    #[error("decay fit failed: {0}")]
    Fit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
