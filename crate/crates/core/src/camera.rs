//! Camera rigs: Hammersley sphere directions with a random offset, the
//! fov/radius framing law, a fixed texture rig and random reference views.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Point3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::sampler::{RngStream, StreamId};

/// Half-diagonal of the unit normalization cube.
pub const BOUND_RADIUS: f64 = 0.866_025_403_784_438_6;
pub const CONDITION_FOV_RANGE: (f64, f64) = (10.0, 70.0);
pub const TEXTURE_FOV_DEG: f64 = 40.0;
pub const TEXTURE_ELEVATIONS_DEG: [f64; 3] = [-20.0, 0.0, 20.0];
pub const REFERENCE_ELEVATION_RANGE: (f64, f64) = (-30.0, 70.0);
pub const TEXTURE_AZIMUTHS: usize = 24;
pub const POINT_LIGHT_PROBABILITY: f64 = 0.3;
/// Number of distinct environment-map ids a reference view can draw.
pub const HDR_ENVIRONMENTS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub fov_deg: f64,
    pub radius: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraSpec {
    /// Camera on a sphere of `radius` around the origin looking at it.
    pub fn orbit(direction: &Vec3, radius: f64, fov_deg: f64, width: u32, height: u32) -> Self {
        let d = direction.normalize();
        CameraSpec {
            position: d * radius,
            target: Vec3::zeros(),
            up: up_hint(&d),
            fov_deg,
            radius,
            width,
            height,
        }
    }

    /// Camera at `elevation` above the xz-plane and `azimuth` around y,
    /// measured from +z toward +x, both in degrees.
    pub fn spherical(elevation_deg: f64, azimuth_deg: f64, radius: f64, fov_deg: f64, size: (u32, u32)) -> Self {
        let (e, a) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
        let d = Vec3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos());
        CameraSpec::orbit(&d, radius, fov_deg, size.0, size.1)
    }
}

/// World y, or z when the view direction is within 1e-6 of vertical.
fn up_hint(direction: &Vec3) -> Vec3 {
    if direction.y.abs() > 1.0 - 1e-6 {
        Vec3::z()
    } else {
        Vec3::y()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LightSpec {
    Point { position: Vec3, intensity: f64 },
    Hdr { environment: u32 },
}

/// Digits of `i` in `base` mirrored about the radix point.
pub fn radical_inverse(base: u32, mut i: u64) -> f64 {
    assert!(base >= 2, "radical inverse needs base >= 2");
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// The 2D Hammersley point `i` of `n`, shifted by `offset` modulo 1.
pub fn hammersley_point(i: usize, n: usize, offset: (f64, f64)) -> (f64, f64) {
    let a = (i as f64 / n as f64 + offset.0).fract();
    let b = (radical_inverse(2, i as u64) + offset.1).fract();
    (a, b)
}

/// Area-preserving map of the unit square onto the sphere.
pub fn square_to_sphere(a: f64, b: f64) -> Vec3 {
    let z = 1.0 - 2.0 * a;
    let phi = TAU * b;
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

pub fn hammersley_sphere(n: usize, offset: (f64, f64)) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let (a, b) = hammersley_point(i, n, offset);
            square_to_sphere(a, b)
        })
        .collect()
}

/// Distance at which a sphere of `bound_radius` exactly fills a view of
/// `fov_deg`.
pub fn radius_for_fov(fov_deg: f64, bound_radius: f64) -> f64 {
    bound_radius / (fov_deg.to_radians() / 2.0).sin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRig {
    pub seed: u64,
    pub offset: [f64; 2],
    pub cameras: Vec<CameraSpec>,
}

/// `n` cameras on Hammersley directions with a random offset. Each camera
/// draws its fov from `U(10, 70)` degrees unless `fixed_fov_deg` is given;
/// the radius follows from the fov.
pub fn build_condition_rig(
    n: usize,
    seed: u64,
    size: (u32, u32),
    fixed_fov_deg: Option<f64>,
) -> ConditionRig {
    let mut rng = RngStream::new(seed, StreamId::Cameras).chunk_rng(0);
    let offset = (rng.random::<f64>(), rng.random::<f64>());
    let cameras = hammersley_sphere(n, offset)
        .iter()
        .map(|d| {
            let (lo, hi) = CONDITION_FOV_RANGE;
            let fov = fixed_fov_deg.unwrap_or_else(|| rng.random_range(lo..=hi));
            CameraSpec::orbit(d, radius_for_fov(fov, BOUND_RADIUS), fov, size.0, size.1)
        })
        .collect();
    ConditionRig {
        seed,
        offset: [offset.0, offset.1],
        cameras,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureRig {
    pub seed: u64,
    pub elevations_deg: [f64; 4],
    pub fov_deg: f64,
    pub radius: f64,
    pub cameras: Vec<CameraSpec>,
}

/// Four elevations (the fixed three plus one random) times 24 azimuths at
/// 15 degree steps, 512x512.
pub fn build_texture_rig(seed: u64) -> TextureRig {
    let mut rng = RngStream::new(seed, StreamId::Cameras).chunk_rng(1);
    let (lo, hi) = REFERENCE_ELEVATION_RANGE;
    let random = rng.random_range(lo..=hi);
    let [a, b, c] = TEXTURE_ELEVATIONS_DEG;
    let elevations = [a, b, c, random];
    let radius = radius_for_fov(TEXTURE_FOV_DEG, BOUND_RADIUS);
    let step = 360.0 / TEXTURE_AZIMUTHS as f64;
    let cameras = elevations
        .iter()
        .flat_map(|&e| {
            (0..TEXTURE_AZIMUTHS)
                .map(move |k| CameraSpec::spherical(e, k as f64 * step, radius, TEXTURE_FOV_DEG, (512, 512)))
        })
        .collect();
    TextureRig {
        seed,
        elevations_deg: elevations,
        fov_deg: TEXTURE_FOV_DEG,
        radius,
        cameras,
    }
}

/// A random reference viewpoint and its light: elevation `U(-30, 70)`,
/// azimuth `U(0, 360)`, and a point light with probability 0.3, else an
/// environment map.
pub fn sample_reference_view<R: Rng + ?Sized>(rng: &mut R) -> (CameraSpec, LightSpec) {
    let (lo, hi) = REFERENCE_ELEVATION_RANGE;
    let elevation = rng.random_range(lo..=hi);
    let azimuth = rng.random_range(0.0..360.0);
    let radius = radius_for_fov(TEXTURE_FOV_DEG, BOUND_RADIUS);
    let camera = CameraSpec::spherical(elevation, azimuth, radius, TEXTURE_FOV_DEG, (512, 512));
    let light = if rng.random_bool(POINT_LIGHT_PROBABILITY) {
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi = rng.random_range(0.0..TAU);
        let s = (1.0 - z * z).sqrt();
        // Uniform direction folded onto the upper hemisphere.
        LightSpec::Point {
            position: Vec3::new(s * phi.cos(), z.abs(), s * phi.sin()) * (2.0 * radius),
            intensity: rng.random_range(0.5..=1.5) * PI,
        }
    } else {
        LightSpec::Hdr {
            environment: rng.random_range(0..HDR_ENVIRONMENTS),
        }
    };
    (camera, light)
}

/// Rigid world-to-camera transform; the camera looks down -z with y up.
pub fn look_at(spec: &CameraSpec) -> Result<Isometry3<f64>> {
    let view = spec.target - spec.position;
    if view.norm() == 0.0 || view.normalize().cross(&spec.up).norm() < 1e-9 {
        return Err(Error::DegenerateCamera);
    }
    Ok(Isometry3::look_at_rh(
        &Point3::from(spec.position),
        &Point3::from(spec.target),
        &spec.up,
    ))
}
