//! Link-level simulation and estimation for two single-antenna users that
//! share one uplink pilot sequence.
//!
//! The second user rotates its pilot by a per-block phase schedule so that a
//! receiver observing the superimposed (collided) pilots can separate the two
//! average channel powers. The crate provides the full chain:
//!
//! * [`pilot`] - orthonormal pilot books and the three rotation schedules
//!   (structured, pseudo-random, canonical/none);
//! * [`channel`] - line-of-sight and Rayleigh gain synthesis, received-signal
//!   generation, and de-spreading into per-block scalar observations;
//! * [`likelihood`] - the Rice-mixture density of the collided observation
//!   magnitudes and its log-likelihood;
//! * [`estimator`] - maximum-likelihood path-loss search on a dB grid, plus
//!   plug-in MMSE channel estimation with de-rotation;
//! * [`experiments`] - seeded Monte Carlo drivers reporting per-user NMSE,
//!   with deterministic results independent of thread count.
//!
//! Monte Carlo drops run in parallel through `rayon` when the default
//! `parallel` feature is enabled; disabling it leaves a sequential fallback
//! with bit-identical output.

pub mod channel;
mod error;
pub mod estimator;
pub mod experiments;
pub mod likelihood;
pub mod pilot;

pub use error::{Error, Result};
