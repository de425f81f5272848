use thiserror::Error;

/// Errors produced by the simulation and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left}x{left} vs {right}x{right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("entry count {got} does not match a {dim}x{dim} matrix")]
    BadShape { dim: usize, got: usize },

    #[error("qubit index {index} out of range for {n_qubits} qubits")]
    QubitIndexOutOfRange { index: usize, n_qubits: usize },

    #[error("invalid {what}: {detail}")]
    InvalidValue { what: &'static str, detail: String },

    #[error("state invariant violated: {0}")]
    StateInvariant(String),

    #[error("observable invariant violated: {0}")]
    ObservableInvariant(String),

    #[error(
        "integration failure at step {step}: smallest eigenvalue {min_eig:.3e} below repair \
         tolerance (dt too large)"
    )]
    IntegrationFailure { step: usize, min_eig: f64 },

    #[error("integration produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("trajectory {index} failed: {source}")]
    TrajectoryFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("state perturbation not positive semidefinite at epsilon {epsilon:.3e}")]
    PsdViolation { epsilon: f64 },

    #[error("expectation value {value} outside [-1, 1] for an involutive observable")]
    ExpectationOutOfRange { value: f64 },

    #[error("training diverged at epoch {epoch} with loss {loss:.3e}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("model error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;
