//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Geometry or configuration input failed validation.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// The barrier mask removed every site.
    #[error("barrier mask covers all lattice sites")]
    AllBarriers,

    /// Active sites do not form a single connected component.
    #[error("lattice graph is disconnected ({n_components} components)")]
    Disconnected { n_components: usize },

    /// A winding loop was empty or referenced an invalid site.
    #[error("loop is not a closed cycle of active sites: {0}")]
    LoopNotClosed(String),

    /// The wrapped phase sum around a loop was not close to an integer
    /// multiple of 2*pi.
    #[error("winding number not an integer: got {value}")]
    NonIntegerWinding { value: f64 },

    /// A winding pattern violates the evenness constraint against the
    /// spin texture.
    #[error("winding pattern violates parity constraint on loop {loop_index}: w_chi={w_chi}, w_xi={w_xi}")]
    ParityViolation {
        loop_index: usize,
        w_chi: i64,
        w_xi: i64,
    },

    /// Charge trace drifted during the self-consistent cycle.
    #[error("charge sum drift {drift:.3e} exceeds tolerance")]
    ChargeDrift { drift: f64 },

    /// An iterative solver failed to reach its tolerance.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// Dense eigendecomposition failed to converge.
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    /// Configuration file parse or cross-validation error.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file is malformed or from an incompatible version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code class: 1 for validation problems, 2 for solver
    /// problems (matches the CLI contract).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::AllBarriers
            | Error::Disconnected { .. }
            | Error::LoopNotClosed(_)
            | Error::ParityViolation { .. }
            | Error::Config(_)
            | Error::Checkpoint(_)
            | Error::Io(_) => 1,
            Error::NonIntegerWinding { .. }
            | Error::ChargeDrift { .. }
            | Error::SolverFailure(_)
            | Error::Eigen(_) => 2,
        }
    }
}
