//! Interior-penalty discontinuous Galerkin solver for tempered fractional
//! convection-diffusion equations in one and two dimensions, with residual
//! and goal-oriented a-posteriori adaptivity.

pub mod assembly;
pub mod error;
pub mod estimate;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod tempered;

pub use error::{Error, Result};
