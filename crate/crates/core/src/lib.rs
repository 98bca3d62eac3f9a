//! Dephasing of a driven qubit by a quasi-static mesoscopic spin bath.
//!
//! The bath enters through the collective operator `A_z = Σ α_k I_z^k`,
//! which shifts the qubit detuning by `λ A_z`. The crate provides
//!
//! * bath statistics: exact eigenvalue law, moments, continuum density of
//!   states and decorrelating noise ([`bath`]);
//! * free evolution: FID, Ramsey, spin echo and measurement correlators
//!   ([`free_evolution`]);
//! * driven evolution: bath-averaged Rabi oscillations, lineshapes, Markovian
//!   damping and slow-noise envelopes ([`driven_evolution`]);
//! * continuum integrals and their stationary-phase asymptotics
//!   ([`stationary_phase`]);
//! * the superconducting-qubit readout model and its least-squares fit
//!   ([`experiment_fit`]);
//! * the `spinbath` command-line front end ([`cli`]).
//!
//! Frequencies are angular and in ns⁻¹, times in ns.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod cli;
pub mod driven_evolution;
pub mod error;
pub mod experiment_fit;
pub mod free_evolution;
pub mod io;
pub mod quadrature;
pub mod rng;
pub mod stationary_phase;
pub mod stats;

pub use error::{Error, Result};
