//! Measure-rigidity laboratory.
//!
//! Computable leaf metrics and their Hausdorff measures, packing and covering
//! numbers, empirical disintegration of orbit measures along product
//! laminations, and a classifier that separates atomic conditional measures
//! from conditionals proportional to the leaf Hausdorff measure.
//!
//! Module map:
//!
//! * [`metric`]: leaf models, leaf metrics, balls, Hausdorff estimation,
//!   doubling and annulus diagnostics.
//! * [`packing`]: packing/covering numbers in Euclidean balls, regularity
//!   certificates and bi-Lipschitz constant transfer.
//! * [`lamination`]: product charts, plaques and chart overlaps.
//! * [`metric_systems`]: invariant metric families, truncated sup-metrics,
//!   invariance defects and bi-Lipschitz reports.
//! * [`systems`]: the built-in dynamical systems and orbit streams.
//! * [`disintegration`]: empirical conditional measures per plaque.
//! * [`classifier`]: distortion ladders, atom detection and the verdict.
//! * [`cli`]: config parsing and the experiment runner.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod cli;
pub mod disintegration;
pub mod error;
pub mod lamination;
pub mod metric;
pub mod metric_systems;
pub mod packing;
pub mod stats;
pub mod systems;

pub use error::{Error, Result};
