//! Reconstruction of complex MRI volumes as sums of 3D Gaussians fitted to
//! undersampled multicoil k-space.

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod report;
pub mod simkit;
pub mod trainer;
pub mod volume;
pub mod voxelizer;

pub use error::{Error, Result};
