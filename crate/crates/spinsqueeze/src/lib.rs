//! Simulation of spin squeezing in an ensemble of N spin-1/2 particles coupled
//! to a short-lived ancillary system (a flux qubit or a microwave resonator).
//!
//! The library covers:
//!
//! - collective and local spin operators in the Dicke-symmetric basis
//!   (dimension N+1) and the full product basis (dimension 2^N), with an
//!   optional qubit or truncated-boson ancilla factor ([`operators`]);
//! - Lindblad master-equation integration over piecewise-constant schedules
//!   with instantaneous pulses, plus exact superoperator propagation and
//!   steady-state solvers ([`dynamics`]);
//! - the physical models: the full rotating-frame Hamiltonian with
//!   inhomogeneous broadening and couplings, the adiabatically eliminated
//!   effective dynamics, ideal one-axis twisting, and a generic
//!   Reiter-Sorensen effective-operator elimination ([`model`]);
//! - squeezing analysis: the Wineland parameter, mean spin, Q-functions on
//!   the sphere, and closed-form one-axis-twisting moments ([`analysis`]);
//! - pulse protocols: XY8 and concatenated-XY8 dynamical decoupling, spin-echo
//!   checks, the reflection sequence for driven collective relaxation, and
//!   disorder-ensemble averaging ([`protocols`]);
//! - Biot-Savart coupling maps for the superconducting device geometries and
//!   sample statistics ([`geometry`]);
//! - magnetometry sensitivity estimates for coherent and squeezed probes
//!   ([`sensing`]);
//! - a batch CLI front-end emitting CSV trajectories, sweep grids and JSON
//!   run manifests ([`cli`]).
//!
//! All energies are angular frequencies (rad/s, hbar = 1); the CLI accepts
//! plain Hz and converts on input.

extern crate blas_src;

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod protocols;
pub mod sensing;
pub mod space;

mod error;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
