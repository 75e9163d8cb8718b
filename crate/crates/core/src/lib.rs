//! Shortcuts to adiabaticity for a time-dependent harmonic oscillator and a
//! two-level atom: invariant-based inverse engineering, transitionless
//! tracking, and a propagator to verify the designs.
//!
//! Units: ħ = m = 1 throughout.

pub mod curves;
pub mod design_io;
pub mod error;
pub mod fock;
pub mod ho_design;
pub mod linalg;
pub mod propagator;
pub mod tls_design;
pub mod verify;

#[cfg(test)]
mod testutil;

pub const HBAR: f64 = 1.0;
pub const MASS: f64 = 1.0;

pub use error::{Error, Result};
