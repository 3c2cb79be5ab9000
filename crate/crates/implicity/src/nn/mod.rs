//! Hand-rolled neural network stack: layers with explicit backward passes,
//! the three model variants, and checkpoint I/O.

pub mod checkpoint;
pub mod decoder;
pub mod grad;
pub mod hourglass;
pub mod layers;
pub mod model;
pub mod pointnet;
pub mod scalar;
pub mod unet;

pub use decoder::{sigmoid, Decoder};
pub use grad::{Grads, Module};
pub use hourglass::ImageEncoder;
pub use model::{tiny_config, Model, ModelConfig, Variant};
pub use pointnet::PointEncoder;
pub use scalar::Scalar;
pub use unet::UNet;
