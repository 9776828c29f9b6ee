//! Numerical laboratory for the heat equation with variable diffusion and an
//! inverse-square potential,
//!
//! ```text
//! u_t - div(p grad u) - mu/|x|^2 u = f 1_omega   in Omega x (0, T),
//! ```
//!
//! on a staggered finite-difference grid in three dimensions.

pub mod carleman;
pub mod error;
pub mod evolution;
pub mod field;
pub mod grid;
pub mod hum;
pub mod operators;
pub mod report;
pub mod rng;
pub mod solver;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use evolution::{TimeGrid, Trajectory};
pub use field::ScalarField;
pub use grid::{Coefficient, CoefficientSpec, DomainShape, Grid, OmegaSpec, RegionMasks};
pub use sparse::Csr;
