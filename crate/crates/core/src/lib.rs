//! 2.5D segmentation with channel and spatial attention, built on a small
//! hand-differentiated CPU tensor stack.

pub mod attention;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod params;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{Network, NetworkConfig};
pub use real::Real;
pub use rng::SplitMix64;
pub use tensor::Tensor4;
