//! Asymptotic-preserving micro-macro filtered PN solver for the 2D linear
//! kinetic transport equation in diffusive scaling.
//!
//! The angular flux is split into a scalar macro part `rho` and a vector of
//! higher spherical-harmonic moments, the micro part. Both live at the cell
//! centres of a uniform Cartesian mesh and are advanced with a semi-implicit
//! step that stays stable and consistent as the scaling parameter `eps` goes
//! to zero. Optional limiters keep the particle concentration nonnegative.

pub mod angular;
pub mod bench;
pub mod error;
pub mod grid;
pub mod limiter;
pub mod solver;
pub mod stencils;

pub use error::{FpnError, Result};

/// Spatial direction in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}
