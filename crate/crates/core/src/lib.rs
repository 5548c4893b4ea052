//! Training multi-dataset no-reference quality estimators whose subjective
//! score scales disagree.
//!
//! An [`model::AlignModel`] pairs an audio estimator producing scores on a
//! reference scale with a small alignment network that maps those scores onto
//! each dataset's own scale. [`training`] provides the regimens (individual,
//! pooled, bias-aware, multi-dataset finetuning with and without alignment),
//! [`sim`] generates listening experiments with known distortions, and
//! [`metrics`] scores and compares the results.

pub mod data;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numeric;
pub mod plot;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
