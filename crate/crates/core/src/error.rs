use thiserror::Error;

/// Errors raised by assembly, the time-stepping solvers and the reduced problem.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assembly failure: diffusion coefficient is {value} at x = {x}")]
    AssemblyFailure { x: f64, value: f64 },

    #[error("time step {step} failed: {reason}")]
    StepFailure { step: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
