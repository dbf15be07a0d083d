//! Photon statistics of a single quantum dot modelled as a multiexciton ladder.
//!
//! The crate is `no_std` (with `alloc`) and holds only the numerical core:
//!
//! - [`ladder`]: rate-equation generator, steady state, time evolution,
//!   auto- and cross-correlation `g2(tau)`, saturation curves.
//! - [`sim`]: kinetic Monte Carlo of the emission stream through a
//!   beamsplitter and two detectors, plus a pulsed-excitation mode.
//! - [`correlator`]: coincidence histograms, normalization, background
//!   correction, pulsed decay histograms.
//! - [`irf`]: Gaussian instrument response and resolution calibration.
//! - [`fit`]: damped Gauss-Newton least squares and the fits built on it.
//! - [`pipeline`]: model curves as they would be measured (IRF, background,
//!   bin integration).
//!
//! All rates are in ps⁻¹ and all times in ps unless a name says otherwise.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod correlator;
pub mod error;
pub mod fit;
pub mod irf;
pub mod ladder;
pub mod linalg;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;
