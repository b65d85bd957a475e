use thiserror::Error;

/// Errors produced by the simulation and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input value (as opposed to a configuration knob) is out of domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two inputs that must agree (e.g. stream resolutions) do not.
    #[error("configuration error: {0}")]
    Config(String),

    /// Expected event count too large to simulate safely.
    #[error("capacity exceeded: expected {expected:.3e} events (limit {limit:.3e})")]
    Capacity { expected: f64, limit: f64 },

    /// Count rate at or beyond the dead-time limit; the non-paralyzable
    /// correction has no physical solution.
    #[error("rate saturated: ({0:.6e} counts/s) * dead time >= 1")]
    Saturation(f64),

    /// Division by a zero rate or efficiency.
    #[error("division by zero: {0}")]
    DivisionByZero(String),

    /// Visibility of an all-zero fringe is undefined.
    #[error("undefined visibility: {0}")]
    UndefinedVisibility(String),

    /// Fit initialization could not locate the structure it needs.
    #[error("fit initialization failed: {0}")]
    FitInitialization(String),

    /// A fit finished without meeting its convergence tolerances.
    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    /// Malformed time-tag file; `offset` is the byte position of the problem.
    #[error("time-tag format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
