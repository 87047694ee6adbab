//! Core library for simulating and numerically verifying the maximum of
//! branching random walk in a time-inhomogeneous random environment.
//!
//! The crate is organized around five pillars:
//!
//! * [`env`] — offspring-law environments: the sequence of branching factors,
//!   the cumulant path `K_n`, its recentred version `W`, and the growth
//!   constants attached to an environment realization.
//! * [`barrier`] — probabilities that the tilted walk stays below
//!   environment-driven barriers: a deterministic killed-density engine and
//!   an independent Monte-Carlo oracle.
//! * [`brw`] — the branching random walk itself: maxima (exact or pruned),
//!   barrier-constrained particle counts, many-to-one identities and breach
//!   probabilities.
//! * [`centering`] — the environment-dependent centering sequence `m_n`
//!   combining the cumulant path with the barrier probability `p_n`.
//! * [`verify`] — experiment harnesses checking the identities, bounds and
//!   tightness statements the other modules are designed to exhibit.
//!
//! Supporting modules: [`curve`] (barrier-shape functions), [`gauss`]
//! (Gaussian density/CDF), [`rng`] (reproducible random streams and the
//! per-node displacement transform), [`error`].

pub mod barrier;
pub mod brw;
pub mod centering;
pub mod curve;
pub mod env;
pub mod error;
pub mod gauss;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
