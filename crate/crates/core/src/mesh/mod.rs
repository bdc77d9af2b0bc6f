//! Triangle meshes, bounding boxes and the two normalization procedures.
//!
//! Normalization maps a mesh into a side-1 cube centered at the origin (the
//! output fits `[-0.5, 0.5]^3`), and maps a point cloud to zero centroid and
//! unit maximum radius. Both use the convention
//! `output = (input + translation) * scale`.

mod io;

pub use io::{load_mesh, write_mesh, DegeneratePolicy, LoadOptions, LoadReport, MeshFormat};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Relative area below which a face counts as degenerate.
const DEGENERATE_REL_AREA: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.iter().zip(max.iter()).all(|(a, b)| a <= b));
        Self { min, max }
    }

    /// An empty box that any point will grow.
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut b = Self::empty();
        let mut any = false;
        for p in points {
            b.grow(p);
            any = true;
        }
        any.then_some(b)
    }

    /// Cube `[-h, h]^3`.
    pub fn cube(half: f64) -> Self {
        Self::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        self.extent().max()
    }

    pub fn surface_area(&self) -> f64 {
        let e = self.extent();
        if e.iter().any(|v| *v < 0.0) {
            return 0.0;
        }
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// True when `other` lies in the interior of `self` (no shared boundary).
    pub fn strictly_contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.min[i] && other.max[i] < self.max[i])
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }
}

/// Uniform similarity `output = (input + translation) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub translation: Vec3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p + self.translation) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale - self.translation
    }

    /// Distances scale by `scale`; this maps a distance in output space back.
    pub fn invert_distance(&self, d: f64) -> f64 {
        d / self.scale
    }
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Option<Vec<Vec3>>,
}

impl Mesh {
    /// Builds a mesh, rejecting out-of-range indices and degenerate faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let (mesh, _) = Self::with_policy(vertices, faces, DegeneratePolicy::Error)?;
        Ok(mesh)
    }

    /// Builds a mesh under a degenerate-face policy; returns the number of
    /// faces dropped.
    pub fn with_policy(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        policy: DegeneratePolicy,
    ) -> Result<(Self, usize)> {
        let n = vertices.len();
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for (fi, f) in faces.into_iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i as usize >= n) {
                return Err(Error::IndexOutOfRange {
                    face: fi,
                    index: bad as usize,
                    vertex_count: n,
                });
            }
            let repeated = f[0] == f[1] || f[1] == f[2] || f[0] == f[2];
            if policy == DegeneratePolicy::KeepZeroArea && !repeated {
                kept.push(f);
                continue;
            }
            if is_degenerate(&vertices, &f) {
                match policy {
                    DegeneratePolicy::Drop | DegeneratePolicy::KeepZeroArea => {
                        dropped += 1;
                        continue;
                    }
                    DegeneratePolicy::Error => return Err(Error::DegenerateFace { face: fi }),
                }
            }
            kept.push(f);
        }
        Ok((
            Self {
                vertices,
                faces: kept,
                normals: None,
            },
            dropped,
        ))
    }

    /// Skips validation; callers guarantee in-range, non-repeated indices.
    pub(crate) fn from_trusted(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        debug_assert!(faces
            .iter()
            .all(|f| f.iter().all(|&i| (i as usize) < vertices.len())));
        Self {
            vertices,
            faces,
            normals: None,
        }
    }

    /// Attaches per-vertex normals, renormalizing them. Zero-length normals
    /// are rejected.
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                actual: normals.len(),
            });
        }
        let mut unit = Vec::with_capacity(normals.len());
        for n in normals {
            let len = n.norm();
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::InvalidArgument("zero-length vertex normal".into()));
            }
            unit.push(n / len);
        }
        self.normals = Some(unit);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal (twice the area, right-hand rule).
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    /// Unit face normal; zero for a zero-area face.
    pub fn face_normal(&self, face: usize) -> Vec3 {
        let n = self.face_cross(face);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward
    /// orientation.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (
                    self.vertices[a as usize],
                    self.vertices[b as usize],
                    self.vertices[c as usize],
                );
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    /// Same mesh with every face reversed.
    pub fn flipped(&self) -> Mesh {
        Mesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self.normals.as_ref().map(|ns| ns.iter().map(|n| -n).collect()),
        }
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            normals: self.normals.clone(),
        }
    }

    /// Concatenates two meshes into one soup (no welding).
    pub fn merged(&self, other: &Mesh) -> Mesh {
        let offset = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| f.map(|i| i + offset)));
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
            _ => None,
        };
        Mesh {
            vertices,
            faces,
            normals,
        }
    }
}

fn is_degenerate(vertices: &[Vec3], f: &[u32; 3]) -> bool {
    let [a, b, c] = *f;
    if a == b || b == c || a == c {
        return true;
    }
    let (pa, pb, pc) = (
        vertices[a as usize],
        vertices[b as usize],
        vertices[c as usize],
    );
    let e0 = pb - pa;
    let e1 = pc - pa;
    let e2 = pc - pb;
    let longest = e0.norm_squared().max(e1.norm_squared()).max(e2.norm_squared());
    let cross = e0.cross(&e1).norm();
    !(cross > DEGENERATE_REL_AREA * longest)
}

pub fn compute_aabb(mesh: &Mesh) -> Result<Aabb> {
    Aabb::from_points(mesh.vertices()).ok_or(Error::EmptyMesh)
}

/// Fits the mesh into the side-1 cube centered at the origin with a single
/// uniform scale.
pub fn normalize_mesh(mesh: &Mesh) -> Result<(Mesh, NormalizationTransform)> {
    let bounds = compute_aabb(mesh)?;
    let extent = bounds.max_extent();
    if !(extent > 0.0) {
        return Err(Error::ZeroExtent);
    }
    let transform = NormalizationTransform {
        translation: -bounds.center(),
        scale: 1.0 / extent,
    };
    Ok((mesh.map_vertices(|p| transform.apply(p)), transform))
}

/// Centers a point cloud on its centroid and scales the farthest point to
/// unit distance.
pub fn normalize_point_cloud(points: &[Vec3]) -> Result<(Vec<Vec3>, NormalizationTransform)> {
    if points.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let radius = points
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0_f64, f64::max);
    if !(radius > 0.0) {
        return Err(Error::ZeroExtent);
    }
    let transform = NormalizationTransform {
        translation: -centroid,
        scale: 1.0 / radius,
    };
    Ok((points.iter().map(|p| transform.apply(p)).collect(), transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box_mesh(min: Vec3, max: Vec3) -> Mesh {
        let c = fixtures::cube(0.5);
        c.map_vertices(|p| {
            Vec3::new(
                min.x + (p.x + 0.5) * (max.x - min.x),
                min.y + (p.y + 0.5) * (max.y - min.y),
                min.z + (p.z + 0.5) * (max.z - min.z),
            )
        })
    }

    #[test]
    fn aabb_of_cube_and_single_vertex() {
        let m = box_mesh(Vec3::zeros(), Vec3::repeat(2.0));
        let b = compute_aabb(&m).unwrap();
        assert_eq!(b.min, Vec3::zeros());
        assert_eq!(b.max, Vec3::repeat(2.0));

        let single = Mesh::from_trusted(vec![Vec3::new(1.0, 2.0, 3.0)], vec![]);
        let b = compute_aabb(&single).unwrap();
        assert_eq!(b.min, b.max);
        assert_eq!(b.min, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn aabb_matches_brute_force_extrema() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let m = Mesh::from_trusted(pts.clone(), vec![]);
        let b = compute_aabb(&m).unwrap();
        for axis in 0..3 {
            let lo = pts.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(b.min[axis], lo);
            assert_eq!(b.max[axis], hi);
        }
    }

    #[test]
    fn empty_mesh_has_no_aabb() {
        let m = Mesh::from_trusted(vec![], vec![]);
        assert!(matches!(compute_aabb(&m), Err(Error::EmptyMesh)));
    }

    #[test]
    fn normalize_symmetric_cube() {
        let m = box_mesh(Vec3::zeros(), Vec3::repeat(2.0));
        let (n, t) = normalize_mesh(&m).unwrap();
        assert_eq!(t.translation, Vec3::repeat(-1.0));
        assert_eq!(t.scale, 0.5);
        let b = compute_aabb(&n).unwrap();
        assert!((b.min - Vec3::repeat(-0.5)).norm() < 1e-12);
        assert!((b.max - Vec3::repeat(0.5)).norm() < 1e-12);
    }

    #[test]
    fn normalize_preserves_aspect() {
        let m = box_mesh(Vec3::zeros(), Vec3::new(4.0, 2.0, 1.0));
        let (n, _) = normalize_mesh(&m).unwrap();
        let b = compute_aabb(&n).unwrap();
        assert!((b.extent() - Vec3::new(1.0, 0.5, 0.25)).norm() < 1e-12);
        assert!(b.center().norm() < 1e-9);
    }

    #[test]
    fn normalize_round_trips_through_inverse() {
        let m = fixtures::torus(1.3, 0.4, 24, 12).map_vertices(|p| p * 3.7 + Vec3::new(5.0, -2.0, 0.25));
        let (n, t) = normalize_mesh(&m).unwrap();
        for (orig, out) in m.vertices().iter().zip(n.vertices()) {
            assert!((t.invert(out) - orig).norm() < 1e-6);
        }
    }

    #[test]
    fn normalize_rejects_zero_extent() {
        let p = Vec3::new(1.0, 1.0, 1.0);
        let m = Mesh::from_trusted(vec![p, p, p], vec![]);
        assert!(matches!(normalize_mesh(&m), Err(Error::ZeroExtent)));
    }

    #[test]
    fn normalize_is_idempotent_and_translation_invariant() {
        let m = fixtures::icosphere(2, 0.7).map_vertices(|p| Vec3::new(p.x * 2.0, p.y, p.z * 0.3));
        let (n1, _) = normalize_mesh(&m).unwrap();
        let (n2, _) = normalize_mesh(&n1).unwrap();
        let shifted = m.map_vertices(|p| p + Vec3::new(10.0, -3.0, 7.5));
        let (n3, _) = normalize_mesh(&shifted).unwrap();
        for ((a, b), c) in n1.vertices().iter().zip(n2.vertices()).zip(n3.vertices()) {
            assert!((a - b).norm() < 1e-9);
            assert!((a - c).norm() < 1e-9);
        }
    }

    #[test]
    fn point_cloud_examples() {
        let pts = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
        let (out, _) = normalize_point_cloud(&pts).unwrap();
        assert_eq!(out, pts.to_vec());

        let pts = [Vec3::new(2.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0)];
        let (out, _) = normalize_point_cloud(&pts).unwrap();
        assert_eq!(out, vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]);

        let same = [Vec3::repeat(3.0); 4];
        assert!(matches!(normalize_point_cloud(&same), Err(Error::ZeroExtent)));
    }

    #[test]
    fn point_cloud_statistics_after_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random_range(-3.0..5.0), rng.random_range(0.0..1.0), rng.random_range(-9.0..-2.0)))
            .collect();
        let (out, _) = normalize_point_cloud(&pts).unwrap();
        let c = out.iter().sum::<Vec3>() / out.len() as f64;
        assert!(c.norm() < 1e-9);
        let max = out.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_faces_policy() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::x() * 2.0];
        let faces = vec![[0, 1, 2], [0, 0, 1], [0, 1, 3]];
        let (m, dropped) = Mesh::with_policy(v.clone(), faces.clone(), DegeneratePolicy::Drop).unwrap();
        assert_eq!(m.face_count(), 1);
        assert_eq!(dropped, 2);
        let (m, dropped) = Mesh::with_policy(v.clone(), faces.clone(), DegeneratePolicy::KeepZeroArea).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 1, 3]]);
        assert_eq!(dropped, 1);
        assert!(matches!(
            Mesh::with_policy(v, faces, DegeneratePolicy::Error),
            Err(Error::DegenerateFace { face: 1 })
        ));
    }

    #[test]
    fn cube_volume_and_area() {
        let c = fixtures::cube(0.5);
        assert!((c.signed_volume() - 1.0).abs() < 1e-12);
        assert!((c.surface_area() - 6.0).abs() < 1e-12);
        assert!((c.flipped().signed_volume() + 1.0).abs() < 1e-12);
    }
}
