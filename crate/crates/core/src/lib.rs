//! Regularized stochastic p-Laplace and total variation flow with gradient
//! transport noise on the flat torus `T^d`, `d = 1, 2`.

pub mod coefficients;
pub mod error;
mod expr;
pub mod fields;
pub mod io;
pub mod operators;
pub mod potentials;
pub mod simulator;
pub mod verify;

pub use coefficients::{CoefficientSet, ConditionReport};
pub use error::{Error, Result};
pub use fields::{MatrixField, PeriodicGrid, ScalarField, Spectrum, VectorField};
pub use potentials::ConvexPotential;
