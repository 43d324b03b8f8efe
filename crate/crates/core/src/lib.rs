//! Neuron-concept association analysis.
//!
//! Scores every (neuron, concept) pair of a set of layer activations by
//! saliency (normalized mutual information) and selectivity (share of the
//! neuron's total saliency), tests both with label permutations under
//! single-step maxT correction, and answers the dashboard's view queries
//! (Pareto front, knee point, top-k, distributions).

pub mod data;
pub mod error;
pub mod metrics;
pub mod pareto;
pub mod pipeline;
pub mod progress;
pub mod result;
pub mod significance;
pub mod view;

pub use error::{Error, Result};
