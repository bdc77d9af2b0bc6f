//! Nearest-surface distance, generalized winding number and baked SDF grids.
//!
//! Interior is negative: a point is inside when its winding number exceeds
//! one half.

mod bvh;
pub mod geom;
mod grid;

pub use bvh::{Bvh, ClosestHit, RayHit, MAX_LEAF};
pub use grid::{bake_sdf_grid, GridMeta, SdfGrid};

use crate::error::Result;
use crate::mesh::{Mesh, Vec3};

pub fn build_bvh(mesh: &Mesh) -> Result<Bvh> {
    Bvh::build(mesh)
}

/// Winding-number threshold separating interior from exterior.
pub const INSIDE_THRESHOLD: f64 = 0.5;

/// Unsigned distance to the surface, negated when the winding number is
/// strictly above one half.
pub fn signed_distance(bvh: &Bvh, q: &Vec3) -> f64 {
    let d = bvh.closest_point(q).distance;
    if bvh.winding_number(q) > INSIDE_THRESHOLD {
        -d
    } else {
        d
    }
}
