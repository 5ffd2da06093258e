//! Semi-analytic propagators for driven quantum systems.
//!
//! The drift Hamiltonian is diagonalized once; each drive enters through a
//! Hermitian dipole operator modulated at a fixed carrier. The short-time
//! propagator over one subpixel is expanded in a truncated Dyson series
//! whose path integrals are evaluated in closed form through an oscillatory
//! divided-difference kernel. Amplitude-independent operators are prepared
//! once per system and reused across every subpixel, pulse, and optimizer
//! iteration; total propagators and exact drive-amplitude gradients then
//! cost one pass of small dense matrix products.
//!
//! Module map:
//! - [`core`]: system models, units, dense-matrix helpers
//! - [`weighting`]: the oscillatory divided-difference kernel
//! - [`pulses`]: pixels, bandwidth filtering, subpixel amplitudes
//! - [`dyson`]: per-order path operators and the prepared cache
//! - [`propagate`]: step unitaries, ordered products, derivatives
//! - [`control`]: gate fidelity, exact gradients, gradient-ascent search
//! - [`oracle`]: brute-force integrators and quadratures (test references)
//! - [`models`]: transmon builders and the randomized benchmark ensemble

pub mod control;
pub mod core;
pub mod dyson;
pub mod error;
pub mod models;
pub mod oracle;
pub mod propagate;
pub mod pulses;
pub mod weighting;

pub use error::{Error, Result};
