//! Graph smoothness metrics, information-gain estimators, topology
//! wavelet features and a small tape-based autodiff for training
//! context-surrounding graph neural networks and baselines.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod infogain;
pub mod models;
pub mod scalar;
pub mod smoothness;
pub mod stats;
pub mod synth;
pub mod topo;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision dataset.
pub type Dataset = graph::Dataset<f64>;
/// Single-precision dataset.
pub type Dataset32 = graph::Dataset<f32>;
