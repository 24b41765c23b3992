//! UWB anchor self-calibration.
//!
//! A robot running visual-inertial odometry ranges to fixed UWB anchors of
//! unknown position and bias. Calibration runs in two stages: an
//! uncertainty-aware batch initializer over a window of pose estimates, then
//! Schmidt-Kalman refinement that updates only the anchor states while keeping
//! their cross-covariance with the robot. The [`sim`] module generates
//! reproducible scenarios and runs Monte Carlo studies.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod par;
pub mod fim;
pub mod initializer;
pub mod io;
pub mod propagation;
pub mod sim;
pub mod refiner;
pub mod state;
pub mod stats;
pub mod update;
pub mod uwb;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
