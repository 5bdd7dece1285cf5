//! Three-phase voxel microstructures: synthetic generation, ground-truth
//! descriptors, cubical persistence images and a dense regressor.

pub mod descriptors;
pub mod error;
pub mod features;
pub mod grid;
pub mod hpo;
pub mod nn;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
