// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Ensemble-averaged dynamics of disordered tight-binding lattices.
//!
//! Two routes to the disorder-averaged state are provided:
//!
//! * [`ensemble`]: numerically exact unitary evolution of individual disorder
//!   realizations, averaged into `ρ_ens(t)`.
//! * [`lindblad`]: the short-time disorder master equation, whose dissipator
//!   is built from the second moments of the on-site energies.
//!
//! [`observables`] compares the two (purity, momentum fringes, ratio maps,
//! validity horizon), [`continuum`] covers the random linear and harmonic
//! potentials on a continuous grid, and [`scenario`] drives complete runs
//! that write a reproducible artifact bundle.
//!
//! Units: ħ = 1, lattice spacing a = 1 and hopping J = 1 unless overridden.

pub mod continuum;
pub mod disorder;
pub mod ensemble;
pub mod error;
pub mod lindblad;
pub mod model;
pub mod observables;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{Boundary, DensityMatrix, DisorderRealization, Hamiltonian, LatticeSpec, StateVector};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
