//! Occupancy-field DSM reconstruction at desk scale.
//!
//! The pipeline goes: synthesize an analytic city scene (exact occupancy
//! oracle), simulate a noisy photogrammetric point cloud and a pair of
//! ortho-images, fuse a conventional median DSM as baseline, train an
//! implicit occupancy network on oracle-labeled query points, extract a
//! raster DSM by hierarchical per-column refinement, and score both DSMs
//! against the analytic reference with masked height metrics.

pub mod error;
pub mod raster;
pub mod patch;
pub mod plane;
pub mod scene;
pub mod sensor;
pub mod fusion;
pub mod sampler;
pub mod nn;
pub mod train;
pub mod extract;
pub mod evaluate;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
