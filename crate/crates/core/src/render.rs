//! Geometry-only raycast renders: depth, world-space normal and silhouette
//! mask, one ray through each pixel center.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{look_at, CameraSpec};
use crate::error::{Error, Result};
use crate::field::Bvh;
use crate::mesh::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: u32,
    pub height: u32,
    pub camera: CameraSpec,
    /// Distance along the primary ray, `+inf` for misses. Row-major from the
    /// top-left pixel.
    pub depth: Vec<f64>,
    /// Unit world-space face normal, zero for misses.
    pub normal: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl RenderBuffers {
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    /// Smallest and largest finite depth, if any pixel was hit.
    pub fn depth_range(&self) -> Option<(f64, f64)> {
        let finite = self.depth.iter().copied().filter(|d| d.is_finite());
        finite.fold(None, |acc, d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
    }
}

/// Unit world-space direction of the ray through pixel `(x, y)`.
pub fn pixel_ray(spec: &CameraSpec, to_world: &nalgebra::Isometry3<f64>, x: u32, y: u32) -> Vec3 {
    let tan = (spec.fov_deg.to_radians() / 2.0).tan();
    let aspect = spec.width as f64 / spec.height as f64;
    let u = ((x as f64 + 0.5) / spec.width as f64 * 2.0 - 1.0) * tan * aspect;
    let v = (1.0 - (y as f64 + 0.5) / spec.height as f64 * 2.0) * tan;
    to_world.rotation * Vec3::new(u, v, -1.0).normalize()
}

pub fn render(bvh: &Bvh, spec: &CameraSpec) -> Result<RenderBuffers> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let to_world = look_at(spec)?.inverse();
    let (w, h) = (spec.width, spec.height);
    let rows: Vec<Vec<(f64, Vec3)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let dir = pixel_ray(spec, &to_world, x, y);
                    match bvh.intersect_ray(&spec.position, &dir, 0.0, f64::INFINITY) {
                        Some(hit) => (hit.t, bvh.face_normal(hit.face)),
                        None => (f64::INFINITY, Vec3::zeros()),
                    }
                })
                .collect()
        })
        .collect();
    let mut out = RenderBuffers {
        width: w,
        height: h,
        camera: *spec,
        depth: Vec::with_capacity((w * h) as usize),
        normal: Vec::with_capacity((w * h) as usize),
        mask: Vec::with_capacity((w * h) as usize),
    };
    for (d, n) in rows.into_iter().flatten() {
        out.mask.push(d.is_finite());
        out.depth.push(d);
        out.normal.push(n);
    }
    Ok(out)
}

/// Per-view sidecar written next to the PNGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMeta {
    pub view: usize,
    pub camera: CameraSpec,
    /// Depth range mapped onto PNG values 1..=65535; 0 marks a miss.
    pub near: f64,
    pub far: f64,
    pub depth_encoding: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewFiles {
    pub mask: PathBuf,
    pub normal: PathBuf,
    pub depth: PathBuf,
    pub meta: PathBuf,
}

impl ViewFiles {
    pub fn all(&self) -> [&Path; 4] {
        [&self.mask, &self.normal, &self.depth, &self.meta]
    }
}

pub fn encode_normal(n: &Vec3) -> [u8; 3] {
    [n.x, n.y, n.z].map(|c| (((c + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// 16-bit depth code: 0 for a miss, else 1..=65535 across `[near, far]`.
pub fn encode_depth(d: f64, near: f64, far: f64) -> u16 {
    if !d.is_finite() {
        return 0;
    }
    let span = far - near;
    let t = if span > 0.0 { ((d - near) / span).clamp(0.0, 1.0) } else { 0.0 };
    1 + (t * 65534.0).round() as u16
}

pub fn decode_depth(code: u16, near: f64, far: f64) -> f64 {
    if code == 0 {
        f64::INFINITY
    } else {
        near + (code - 1) as f64 / 65534.0 * (far - near)
    }
}

/// Writes `view_{i:03}_{mask,normal,depth}.png` and `view_{i:03}.json`.
pub fn write_images(buffers: &RenderBuffers, dir: &Path, view: usize) -> Result<ViewFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = (buffers.width, buffers.height);
    let (near, far) = buffers.depth_range().unwrap_or((0.0, 0.0));
    let stem = format!("view_{view:03}");
    let files = ViewFiles {
        mask: dir.join(format!("{stem}_mask.png")),
        normal: dir.join(format!("{stem}_normal.png")),
        depth: dir.join(format!("{stem}_depth.png")),
        meta: dir.join(format!("{stem}.json")),
    };

    let mask = GrayImage::from_fn(w, h, |x, y| {
        Luma([if buffers.mask[(y * w + x) as usize] { 255 } else { 0 }])
    });
    mask.save(&files.mask)?;
    let normal = RgbImage::from_fn(w, h, |x, y| {
        let i = (y * w + x) as usize;
        if buffers.mask[i] {
            Rgb(encode_normal(&buffers.normal[i]))
        } else {
            Rgb([0, 0, 0])
        }
    });
    normal.save(&files.normal)?;
    let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
        Luma([encode_depth(buffers.depth[(y * w + x) as usize], near, far)])
    });
    depth.save(&files.depth)?;

    let meta = ViewMeta {
        view,
        camera: buffers.camera,
        near,
        far,
        depth_encoding: "u16: 0 = miss, 1 + round((d - near) / (far - near) * 65534)".into(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&files.meta, json).map_err(|e| Error::io(&files.meta, e))?;
    Ok(files)
}

/// Flat Lambert shading with a headlight, for eyeballing renders.
pub fn write_preview(buffers: &RenderBuffers, path: &Path) -> Result<()> {
    let to_world = look_at(&buffers.camera)?.inverse();
    let w = buffers.width;
    let img = RgbImage::from_fn(w, buffers.height, |x, y| {
        let i = (y * w + x) as usize;
        if !buffers.mask[i] {
            return Rgb([0, 0, 0]);
        }
        let dir = pixel_ray(&buffers.camera, &to_world, x, y);
        let shade = buffers.normal[i].dot(&-dir).abs();
        let v = (40.0 + 215.0 * shade).round() as u8;
        Rgb([v, v, v])
    });
    img.save(path)?;
    Ok(())
}

/// World-space hit point of pixel `i`, if it was hit.
pub fn hit_point(buffers: &RenderBuffers, i: usize) -> Option<Vec3> {
    if !buffers.mask[i] {
        return None;
    }
    let to_world = look_at(&buffers.camera).ok()?.inverse();
    let (x, y) = ((i as u32) % buffers.width, (i as u32) / buffers.width);
    let dir = pixel_ray(&buffers.camera, &to_world, x, y);
    Some(buffers.camera.position + dir * buffers.depth[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::build_bvh;
    use crate::fixtures;

    fn front_camera(distance: f64, fov: f64, size: u32) -> CameraSpec {
        CameraSpec {
            position: Vec3::new(0.0, 0.0, distance),
            target: Vec3::zeros(),
            up: Vec3::y(),
            fov_deg: fov,
            radius: distance,
            width: size,
            height: size,
        }
    }

    #[test]
    fn sphere_center_depth() {
        let bvh = build_bvh(&fixtures::icosphere(5, 0.4)).unwrap();
        // Odd size puts a pixel center exactly on the optical axis.
        let b = render(&bvh, &front_camera(2.0, 40.0, 65)).unwrap();
        let c = (32 * 65 + 32) as usize;
        assert!((b.depth[c] - 1.6).abs() < 2e-3);
        assert!((b.normal[c] - Vec3::z()).norm() < 0.05);
        assert!(b.mask.iter().zip(&b.depth).all(|(m, d)| *m == d.is_finite()));
    }

    #[test]
    fn sphere_coverage_matches_projection() {
        let bvh = build_bvh(&fixtures::icosphere(5, 0.4)).unwrap();
        let fov = 40f64.to_radians();
        // The silhouette of a sphere seen head-on is a disc of radius
        // tan(asin(r / d)) on the unit image plane.
        let alpha = (0.4f64 / 2.0).asin();
        let expected = std::f64::consts::PI * alpha.tan().powi(2) / (2.0 * (fov / 2.0).tan()).powi(2);
        let b = render(&bvh, &front_camera(2.0, 40.0, 256)).unwrap();
        assert!((b.coverage() - expected).abs() / expected < 0.02, "{} vs {expected}", b.coverage());
        let fine = render(&bvh, &front_camera(2.0, 40.0, 512)).unwrap();
        assert!((fine.coverage() - b.coverage()).abs() / b.coverage() < 0.01);
    }

    #[test]
    fn looking_away_misses_everything() {
        let bvh = build_bvh(&fixtures::cube(0.5)).unwrap();
        let spec = CameraSpec {
            target: Vec3::new(0.0, 0.0, 5.0),
            ..front_camera(2.0, 40.0, 16)
        };
        let b = render(&bvh, &spec).unwrap();
        assert!(b.mask.iter().all(|m| !m));
        assert!(b.depth.iter().all(|d| d.is_infinite()));
        assert!(b.normal.iter().all(|n| *n == Vec3::zeros()));
        assert_eq!(b.depth_range(), None);
    }

    #[test]
    fn normal_encoding() {
        assert_eq!(encode_normal(&Vec3::z()), [128, 128, 255]);
        assert_eq!(encode_normal(&-Vec3::x()), [0, 128, 128]);
    }

    #[test]
    fn depth_codes_round_trip() {
        let (near, far) = (1.2, 3.7);
        assert_eq!(encode_depth(f64::INFINITY, near, far), 0);
        assert_eq!(encode_depth(near, near, far), 1);
        assert_eq!(encode_depth(far, near, far), 65535);
        for k in 0..1000 {
            let d = near + (far - near) * k as f64 / 999.0;
            let back = decode_depth(encode_depth(d, near, far), near, far);
            assert!((back - d).abs() <= (far - near) / 65535.0);
        }
    }

    #[test]
    fn written_files_decode() {
        let dir = tempfile::tempdir().unwrap();
        let bvh = build_bvh(&fixtures::icosphere(3, 0.4)).unwrap();
        let b = render(&bvh, &front_camera(2.0, 40.0, 32)).unwrap();
        let files = write_images(&b, dir.path(), 7).unwrap();
        assert!(files.mask.ends_with("view_007_mask.png"));
        let meta: ViewMeta = serde_json::from_str(&fs::read_to_string(&files.meta).unwrap()).unwrap();
        let depth = image::open(&files.depth).unwrap().into_luma16();
        let mask = image::open(&files.mask).unwrap().into_luma8();
        for (i, (px, m)) in depth.pixels().zip(mask.pixels()).enumerate() {
            assert_eq!(m.0[0] == 255, b.mask[i]);
            let d = decode_depth(px.0[0], meta.near, meta.far);
            if b.mask[i] {
                assert!((d - b.depth[i]).abs() <= (meta.far - meta.near) / 65535.0);
            } else {
                assert!(d.is_infinite());
            }
        }

        let empty = RenderBuffers {
            mask: vec![false; b.mask.len()],
            depth: vec![f64::INFINITY; b.mask.len()],
            normal: vec![Vec3::zeros(); b.mask.len()],
            ..b.clone()
        };
        let files = write_images(&empty, dir.path(), 8).unwrap();
        let mask = image::open(&files.mask).unwrap().into_luma8();
        assert!(mask.pixels().all(|p| p.0[0] == 0));
        write_preview(&b, &dir.path().join("preview.png")).unwrap();
    }

    #[test]
    fn hits_stay_inside_bounds() {
        let mesh = fixtures::torus(0.35, 0.12, 40, 16);
        let bvh = build_bvh(&mesh).unwrap();
        let bounds = bvh.bounds().inflate(1e-6);
        for cam in crate::camera::build_condition_rig(6, 3, (48, 48), None).cameras {
            let b = render(&bvh, &cam).unwrap();
            for i in 0..b.mask.len() {
                if let Some(p) = hit_point(&b, i) {
                    assert!(bounds.contains(&p));
                }
            }
        }
    }
}
