use thiserror::Error;

/// Failures raised by the simulation engines and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OscarError {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The truncated Fock basis cannot represent the state to the required
    /// accuracy.
    #[error("truncation error: {what} = {value:e} exceeds tolerance {tolerance:e}")]
    Truncation {
        what: &'static str,
        value: f64,
        tolerance: f64,
    },

    /// Adaptive step control failed.
    #[error("convergence error at tau = {tau}: {reason}")]
    Convergence { tau: f64, reason: String },

    /// A dense eigendecomposition failed or produced non-finite output.
    #[error("linear algebra error: {0}")]
    LinAlg(String),

    /// The density matrix developed an eigenvalue below the positivity floor.
    #[error("positivity error at tau = {tau}: min eigenvalue {min_eigenvalue:e} < {floor:e}")]
    Positivity {
        tau: f64,
        min_eigenvalue: f64,
        floor: f64,
    },

    /// A requested feature (peak, frequency shift) cannot be resolved.
    #[error("unresolved: {0}")]
    Unresolved(String),
}

pub type Result<T> = std::result::Result<T, OscarError>;

impl OscarError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }
}
