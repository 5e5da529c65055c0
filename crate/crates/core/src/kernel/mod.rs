//! Numerical building blocks shared by the solvers.

pub mod barrier;
pub mod lp;
pub mod scalar;
