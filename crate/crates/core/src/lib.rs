//! Training of rate-coded integrate-and-fire networks with spike-count
//! surrogate gradients.
//!
//! Each neuron's output over a presentation window is summarised by its spike
//! count, which is a floor-and-clamp function of the aggregated input
//! current. Training backpropagates through that function with the surrogate
//! slope `1/θ` on positive currents and updates weights and initial membrane
//! potentials with Adam.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod network;
pub mod neuron;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
