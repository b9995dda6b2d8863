use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFiniteValue(&'static str),

    #[error("direction vector has zero norm")]
    ZeroDirection,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("gradient norm {norm:e} below floor {floor:e}{}", task_suffix(*.task))]
    DegenerateGradient {
        task: Option<usize>,
        norm: f64,
        floor: f64,
    },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("step size {gamma} outside (0, {max}]")]
    StepSizeOutOfRange { gamma: f64, max: f64 },

    #[error("enumeration of {sequences} index sequences exceeds cap {cap}")]
    EnumerationTooLarge { sequences: u128, cap: u128 },

    #[error("task {0} has no located minimizer")]
    MissingMinimizer(usize),

    #[error("minimizer search did not converge in {steps} steps (grad norm {grad_norm:e})")]
    NotConverged { steps: usize, grad_norm: f64 },

    #[error("parameter is not stationary: train gradient norm {0:e}")]
    NotStationary(f64),

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn task_suffix(task: Option<usize>) -> String {
    match task {
        Some(k) => format!(" (task {k})"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
