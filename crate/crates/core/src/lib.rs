//! Simulation of a pulsed electron-spin-resonance spectrometer built around a
//! superconducting nanowire LC resonator, with bismuth donors in silicon as
//! the spin ensemble.
//!
//! The crate is organized bottom-up:
//!
//! * [`spin`]: donor Hamiltonian, diagonalization and ESR lines.
//! * [`resonator`]: single-photon field map, reflection, fitting, TLS loss and
//!   Kerr steady state.
//! * [`sample`]: implantation profile, strain, spin ensemble and nuclear bath.
//! * [`sequence`]: pulse sequences.
//! * [`dynamics`]: cavity/Bloch integration, Purcell rates, ESEEM.
//! * [`detection`]: noise, phase cycling, echo integration and statistics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod numerics;
pub mod resonator;
pub mod sample;
pub mod sequence;
pub mod spin;

pub use error::{Error, Result};
