//! Graph attention-based instance selection (GAIS) for tabular datasets.
//!
//! The pipeline: load and preprocess a tabular dataset, shuffle and cut the
//! training split into overlapping chunks, build a similarity-thresholded
//! graph per chunk, train a two-layer multi-head graph attention network
//! with a confidence-weighted loss, and keep only the instances whose
//! prediction confidence clears a threshold. Classical selection baselines
//! (CNN, ENN, LDIS, RMHC), downstream classifiers, evaluation metrics, and
//! a Gaussian-process Bayesian tuner round out the benchmarking toolkit.

pub mod baselines;
pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod gat;
pub mod graph;
pub mod hpo;
pub mod metrics;
pub mod trainer;

pub use error::{ErrorCategory, GaisError, Result};
