use thiserror::Error;

/// Errors raised by kernels, solvers and simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsdError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate kernel: state {state} leaves [0, {threshold}] almost surely in one step")]
    DegenerateKernel { state: f64, threshold: f64 },

    #[error("vacuous threshold {0}: no grid state can exceed it in one step")]
    VacuousThreshold(f64),

    #[error("extinction: the whole support escapes in one step (iteration {iteration})")]
    Extinction { iteration: usize },

    #[error("divergent exit time: survival eigenvalue {0} is not below 1")]
    Divergence(f64),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "fixpoint iteration did not converge after {iterations} iterations (residual {residual})"
    )]
    NotConverged { iterations: usize, residual: f64 },

    #[error("degenerate row {row}: zero survival mass")]
    DegenerateRow { row: usize },

    #[error("{capped} of {n_reps} replications hit the step cap {step_cap}")]
    CapDominated {
        capped: u64,
        n_reps: u64,
        step_cap: u64,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("empty report")]
    EmptyReport,

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for QsdError {
    fn from(e: std::io::Error) -> Self {
        QsdError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QsdError>;
