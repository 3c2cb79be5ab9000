//! Element type for network parameters and activations. Training runs in
//! f32; the f64 instantiation exists for gradient checking.

use num_traits::{Float, FromPrimitive};

pub trait Scalar:
    ndarray::LinalgScalar
    + Float
    + FromPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn cast(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}
