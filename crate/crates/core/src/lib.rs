//! Coupled simulation of an N-particle stochastic Hamiltonian system with a
//! long-range scaled interaction and of the stochastic compressible Euler
//! system (pressure `p = ρ²/2`) driven by the same Brownian path.
//!
//! The crate is organised bottom-up:
//!
//! * [`mollifier`]: base kernel `φ₁ʳ`, interaction potential `φ₁ = φ₁ʳ ∗ φ₁ʳ`,
//!   the `N`-scaled families and diagnostics for the kernel hypotheses.
//! * [`field`]: periodic spectral grids, Sobolev norms, deposits and
//!   negative-Sobolev distances between empirical measures and fields.
//! * [`particle`]: particle state, forces (direct and particle-mesh) and the
//!   drift/exact-noise splitting integrator.
//! * [`euler`]: pseudo-spectral solver for the fluid system with the
//!   `H^s` stopping guard.
//! * [`experiment`]: coupled runs, the `Q` functional and Monte Carlo rate
//!   studies.
//! * [`config`]: the run configuration shared by the CLI and the tests.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod config;
pub mod error;
pub mod euler;
pub mod experiment;
pub mod field;
pub mod io;
pub mod mollifier;
pub mod parallel;
pub mod particle;
pub mod profiles;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
