//! Simulation and analysis of a single spin-½ coupled to a cantilever in
//! the oscillating cantilever-driven adiabatic reversal (OSCAR) protocol of
//! magnetic resonance force microscopy.
//!
//! All quantities are dimensionless: positions in units of the cantilever
//! zero-point length, time as `τ = ω_c t`. The Hamiltonian in the rotating
//! frame is
//!
//! ```text
//! H = ½(p² + z²) + ε S_x − 2η z S_z
//! ```
//!
//! and the spin sees the effective field `B_eff = (ε, 0, −2ηz)`.
//!
//! Modules:
//! - [`fock`]: oscillator eigenbasis, coherent states, ladder matrices.
//! - [`model`]: parameters, Hamiltonian, unit conversion, closed-form estimates.
//! - [`schrodinger`]: unitary spinor evolution (adaptive ODE and spectral).
//! - [`lindblad`]: density-matrix evolution under the high-temperature ohmic
//!   master equation.
//! - [`classical`]: classical/Heisenberg equations of motion.
//! - [`analysis`]: peak splitting, Fourier shifts, branch factorization and
//!   coherence metrics.

pub mod analysis;
pub mod classical;
pub mod error;
pub mod fock;
pub mod lindblad;
pub mod model;
pub mod ode;
pub mod schrodinger;

pub use error::{OscarError, Result};
pub use num_complex::Complex64 as C64;
