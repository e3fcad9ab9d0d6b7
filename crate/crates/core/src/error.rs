use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fractional order {order}: {reason}")]
    InvalidOrder { order: f64, reason: &'static str },
    #[error("evaluation point {x} outside the domain [{a}, {b}]")]
    OutOfDomain { x: f64, a: f64, b: f64 },
    #[error("evaluation point {x} coincides with a breakpoint")]
    SingularPoint { x: f64 },
    #[error("kernel exponent {exponent} is not integrable (needs > -1)")]
    NonIntegrableKernel { exponent: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ray through ordinate {ordinate} hits a mesh vertex")]
    DegenerateRay { ordinate: f64 },
    #[error("linear solver failed: {0}")]
    SolverFailure(String),
    #[error("effectiveness index undefined: true error is zero")]
    UndefinedIndex,
    #[error("time step underflow below {0:e} during evolution adaptivity")]
    TimeStepUnderflow(f64),
    #[error("degree-of-freedom cap {cap} exceeded (reached {reached})")]
    DofCapExceeded { cap: usize, reached: usize },
    #[error("internal error: {0}")]
    Internal(String),
}
