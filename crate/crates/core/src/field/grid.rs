use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Aabb, Vec3};

use super::{Bvh, INSIDE_THRESHOLD};
#[cfg(doc)]
use super::signed_distance;

/// Dense scalar field over an axis-aligned box, stored x-fastest:
/// `index = i + nx * (j + ny * k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    resolution: [usize; 3],
    bounds: Aabb,
    values: Vec<f32>,
}

/// Sidecar written next to the raw payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dtype: String,
    pub shape: [usize; 3],
    pub order: String,
    pub bounds: Aabb,
}

impl SdfGrid {
    pub fn new(resolution: [usize; 3], bounds: Aabb, values: Vec<f32>) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be at least 2 per axis, got {resolution:?}"
            )));
        }
        let expected = resolution.iter().product();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite grid value at {i}")));
        }
        Ok(SdfGrid {
            resolution,
            bounds,
            values,
        })
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(
        resolution: [usize; 3],
        bounds: Aabb,
        f: impl Fn(&Vec3) -> f64 + Sync,
    ) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be at least 2 per axis, got {resolution:?}"
            )));
        }
        let [nx, ny, nz] = resolution;
        let geom = Lattice::new(resolution, &bounds);
        let mut values = vec![0f32; nx * ny * nz];
        values
            .par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(k, slab)| {
                for j in 0..ny {
                    for i in 0..nx {
                        slab[i + nx * j] = f(&geom.point(i, j, k)) as f32;
                    }
                }
            });
        SdfGrid::new(resolution, bounds, values)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    /// Model-space position of lattice point `(i, j, k)`.
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Lattice::new(self.resolution, &self.bounds).point(i, j, k)
    }

    /// Lattice spacing per axis.
    pub fn spacing(&self) -> Vec3 {
        Lattice::new(self.resolution, &self.bounds).step
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Trilinear interpolation; points outside the box are clamped to it.
    pub fn trilinear(&self, p: &Vec3) -> f64 {
        let step = self.spacing();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let u = ((p[a] - self.bounds.min[a]) / step[a]).clamp(0.0, (n - 1) as f64);
            let b = (u.floor() as usize).min(n - 2);
            base[a] = b;
            frac[a] = u - b as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = [di, dj, dk]
                .iter()
                .zip(frac)
                .map(|(&d, f)| if d == 1 { f } else { 1.0 - f })
                .product::<f64>();
            acc += w * self.get(base[0] + di, base[1] + dj, base[2] + dk) as f64;
        }
        acc
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            dtype: "f32".into(),
            shape: self.resolution,
            order: "x-fastest".into(),
            bounds: self.bounds,
        }
    }

    /// Writes the raw little-endian payload to `path` and the JSON sidecar to
    /// `path` with `.json` appended.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta())?;
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: GridMeta = serde_json::from_str(&text)?;
        if meta.dtype != "f32" || meta.order != "x-fastest" {
            return Err(Error::UnsupportedFormat(format!(
                "grid dtype {} order {}",
                meta.dtype, meta.order
            )));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::DimensionMismatch {
                expected: meta.shape.iter().product::<usize>() * 4,
                actual: bytes.len(),
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        SdfGrid::new(meta.shape, meta.bounds, values)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

struct Lattice {
    min: Vec3,
    step: Vec3,
}

impl Lattice {
    fn new(resolution: [usize; 3], bounds: &Aabb) -> Self {
        let e = bounds.extent();
        Lattice {
            min: bounds.min,
            step: Vec3::new(
                e.x / (resolution[0] - 1) as f64,
                e.y / (resolution[1] - 1) as f64,
                e.z / (resolution[2] - 1) as f64,
            ),
        }
    }

    fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.min + Vec3::new(i as f64 * self.step.x, j as f64 * self.step.y, k as f64 * self.step.z)
    }
}

/// Slack kept between a propagated winding-number interval and the inside
/// threshold before the sign is trusted without a direct evaluation.
const SIGN_MARGIN: f64 = 1e-9;

/// Signed distance sampled on a regular lattice spanning `bounds`, which
/// must strictly contain the mesh.
///
/// Rows are walked along x. When the previous lattice point's empty ball
/// covers the step, the winding number cannot move by more than the step
/// times the boundary gradient bound, so its interval is carried forward
/// and a direct evaluation happens only when the interval nears the
/// threshold. Every value equals [`signed_distance`] at its lattice point.
pub fn bake_sdf_grid(bvh: &Bvh, resolution: [usize; 3], bounds: Aabb) -> Result<SdfGrid> {
    if resolution.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be at least 2 per axis, got {resolution:?}"
        )));
    }
    if !bounds.strictly_contains_box(&bvh.bounds()) {
        return Err(Error::InvalidArgument(
            "grid bounds must strictly contain the mesh".into(),
        ));
    }
    let [nx, ny, nz] = resolution;
    let lattice = Lattice::new(resolution, &bounds);
    let h = lattice.step.x;
    let mut values = vec![0f32; nx * ny * nz];
    values
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                // (distance, winding lower bound, winding upper bound)
                let mut prev: Option<(f64, f64, f64)> = None;
                for i in 0..nx {
                    let p = lattice.point(i, j, k);
                    let d = match prev {
                        Some((dp, _, _)) => bvh.closest_point_within(&p, (dp + h) * (1.0 + 1e-9)),
                        None => bvh.closest_point(&p),
                    }
                    .distance;
                    let (mut lo, mut hi) = match prev {
                        Some((dp, lo, hi)) if dp > h => {
                            let slack = h * bvh.winding_gradient_bound(dp - h);
                            (lo - slack, hi + slack)
                        }
                        _ => (f64::NEG_INFINITY, f64::INFINITY),
                    };
                    if lo <= INSIDE_THRESHOLD + SIGN_MARGIN && hi >= INSIDE_THRESHOLD - SIGN_MARGIN {
                        let w = bvh.winding_number(&p);
                        lo = w;
                        hi = w;
                    }
                    let inside = lo > INSIDE_THRESHOLD;
                    slab[i + nx * j] = if inside { -d } else { d } as f32;
                    prev = Some((d, lo, hi));
                }
            }
        });
    SdfGrid::new(resolution, bounds, values)
}
