//! Simulation toolkit for the dissipative preparation of entangled mechanical
//! Fock states in a two-cell, strongly coupled optomechanical system.
//!
//! The crate is layered bottom-up:
//!
//! * [`fock`] truncated Fock-space operators, partial traces and transposes,
//!   the displacement operator and the normal-mode beam-splitter unitary;
//! * [`laguerre`] associated Laguerre polynomials and the root calibration;
//! * [`model`] parameter calibration, Hamiltonians, dissipators and initial states;
//! * [`dynamics`] sparse Liouvillians, adaptive time evolution and steady states;
//! * [`measures`] negativity, purity, Wigner functions and Wigner log-negativity;
//! * [`experiments`] parameter sweeps producing persisted result tables;
//! * [`validate`] the oracle fixture suite used by the `validate` command.
//!
//! All frequencies, rates and times are expressed in units of the mechanical
//! frequency (omega_m = 1).

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod laguerre;
pub mod measures;
pub mod model;
pub mod validate;

mod expm;

pub use error::{Error, Result};
pub use faer::c64;
pub use fock::{DensityMatrix, ModeLayout, Operator};
