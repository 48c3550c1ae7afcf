//! Complex quantum hydrodynamics on periodic 1D grids.

pub mod error;
pub mod grid;
pub mod madelung;
pub mod schrodinger;
pub mod wigner;
pub mod density_matrix;
pub mod numerics;
pub mod dual_space;
pub mod smoluchowski;

pub use error::{Error, Result};
pub use grid::{integrate, norm_squared, ComplexField, Grid1D, Moments, PhysicalParams, RealField};
pub mod scenario;
