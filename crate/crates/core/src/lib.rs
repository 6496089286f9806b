//! Task grouping for multi-task learning.
//!
//! Given a set of supervised tasks, this crate predicts which tasks benefit
//! from joint training and searches for a partition minimizing the total
//! multi-task loss. The pieces:
//!
//! - [`data`]: tabular multi-task datasets, splits, and a synthetic
//!   generator with a known true grouping.
//! - [`nn`]: a small dense-network engine (backprop, Adam, deterministic
//!   training with learning-curve capture).
//! - [`stl`]: single-task baselines and curve-derived task features.
//! - [`mtl`]: hard-parameter-sharing joint training, per-task losses, head
//!   vectors, inter-task affinity, and relative gain.
//! - [`features`]: the pairwise/groupwise affinity feature catalog.
//! - [`predictor`]: the groupwise gain predictor and partition-loss
//!   estimation.
//! - [`search`]: uniform partition sampling, Bell numbers, the
//!   predictor-guided randomized local search, and baselines.
//! - [`hyper`]: random local search over predictor hyper-parameters.
//! - [`pipeline`]: the staged experiment harness behind the CLI.

pub mod data;
pub mod error;
pub mod features;
pub mod hyper;
pub mod mtl;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod search;
pub mod stl;
pub mod util;

pub use error::{Error, Result};
