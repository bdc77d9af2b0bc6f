//! Converts raw, possibly defective triangle meshes into training records for
//! 3D generative models: normalization, winding-number SDF watertighting,
//! SDF and surface point sampling, camera rigs with geometry renders, plus the
//! flow-matching and VAE loss math used to train on those records.

pub mod camera;
pub mod error;
pub mod fixtures;
pub mod isosurface;
pub mod field;
pub mod flowmatch;
pub mod mesh;
pub mod pipeline;
pub mod render;
pub mod sampler;

pub use error::{Error, Result};
