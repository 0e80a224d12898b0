//! Split conformal clustering with stochastic labels.
//!
//! The pipeline fits a generalizable soft clustering model on a training
//! split, samples stochastic cluster labels, trains a soft classifier on
//! them, aligns label permutations between splits by minimum-cost
//! assignment, calibrates adaptive-prediction-set conformity scores on the
//! calibration split, and emits confidence sets with finite-sample marginal
//! coverage. Companion modules provide simulation generators with known
//! posteriors, oracle-permutation evaluation, and consistency/stability
//! diagnostics feeding a coverage lower bound.

pub mod align;
pub mod classify;
pub mod clustering;
pub mod conformal;
pub mod core;
pub mod error;
pub mod evaluate;
pub mod simulate;

pub use crate::error::{Error, Result};
