//! Numerical toolkit for branching Brownian motion with a compactly
//! supported branching rate `beta * v(x)`.
//!
//! The crate computes the critical branching intensity, the growth exponent
//! and ground state of the generator, limit-variable moments in the
//! supercritical and subcritical regimes, and cross-checks all of it against
//! an exact Monte Carlo particle simulator and an independent
//! finite-difference solver for the integrated moment hierarchy.

pub mod error;
pub mod greenfn;
pub mod grid;
pub mod moments;
pub mod pde;
pub mod potential;
pub mod sim;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use grid::QuadGrid;
pub use potential::{Dim, Potential, PotentialSpec, Shape};
pub use spectral::{GroundState, Normalization, PsiTable};
