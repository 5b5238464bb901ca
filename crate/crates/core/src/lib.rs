//! Pedestrian crash risk estimation from road-user trajectories.
//!
//! The pipeline extracts post-encroachment-time conflicts from tracked
//! trajectories, reduces them to per-signal-cycle block extremes, fits
//! Bayesian non-stationary GEV models and turns the fitted tails into
//! crash-risk estimates.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod cli;
pub mod conflict;
pub mod gev;
pub mod inference;
pub mod risk;
pub mod synth;
pub mod trajectory;
