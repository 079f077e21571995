//! Dense tensors with reverse-mode differentiation over a recorded tape.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod segment;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{ComputeGraph, Var};
pub use params::{ParamId, ParamStore};
pub use segment::SegmentIndex;
pub use tensor::Tensor;

/// Default ELU slope for negative inputs.
pub const ELU_ALPHA: f64 = 1.0;
/// Default leaky-ReLU negative slope.
pub const LEAKY_SLOPE: f64 = 0.2;

#[cfg(test)]
mod tests;
