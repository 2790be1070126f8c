//! Semiclassical wave-packet propagation: Herman–Kluk and thawed Gaussian
//! propagators for scalar Hamiltonians, gapped two-level systems and smooth
//! eigenvalue crossings, with independent reference solvers and a
//! convergence harness.

pub mod adiabatic;
pub mod classical;
pub mod crossing;
pub mod error;
pub mod grid;
pub mod hamiltonians;
pub mod harness;
pub mod hk_scalar;
pub mod linalg;
pub mod ode;
pub mod reference;
pub mod wavepackets;

pub use error::{Error, Result};
pub use num_complex::Complex64;
