//! Radial mountain-pass solver for semilinear fractional-Laplacian problems
//! with nonlocal Neumann boundary conditions.
//!
//! The equation is (-Delta)^s u + u = f(u) on a ball or annulus, with u >= 0
//! and the nonlocal normal-derivative condition N_s u = 0 in the exterior,
//! for s in (1/2, 1). Everything is reduced to the radial profile: the kernel
//! is integrated over spheres once ([`kernel`]), the bilinear form lives on a
//! one-dimensional graded mesh, the exterior degrees of freedom are eliminated
//! exactly, and nonconstant solutions are found as mountain-pass critical
//! points between ordered bands of constant equilibria.

pub mod assembly;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod nonlinearity;
pub mod oracles;
pub mod quad;
pub mod spectral;
pub mod variational;
pub mod verify;

pub use error::{Error, Result};
