//! Surface, near-surface and volume point sampling plus farthest point
//! sampling.
//!
//! Every sampler draws from a [`RngStream`] split into fixed-size chunks, so
//! a chunk's numbers depend only on (seed, stream, chunk) and results do not
//! change with the thread count.

mod fps;
mod rng;

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{signed_distance, Bvh};
use crate::mesh::{Mesh, Vec3};

pub use fps::farthest_point_sampling;
pub use rng::{RngStream, StreamId, CHUNK};

/// Default dihedral deviation above which an edge counts as sharp.
pub const SHARP_ANGLE_DEG: f64 = 30.0;
/// Default maximum offset of sharp samples away from their edge.
pub const SHARP_OFFSET: f64 = 0.01;
/// Default near-surface noise scales; half the points use each.
pub const NEAR_SIGMAS: [f64; 2] = [0.01, 0.05];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceSamples {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub source_face: Vec<u32>,
    /// Set when sharp sampling found no sharp edge and drew uniformly.
    pub fallback: bool,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Row-major `N x 6` array of position then normal.
    pub fn to_rows(&self) -> Vec<f32> {
        self.positions
            .iter()
            .zip(&self.normals)
            .flat_map(|(p, n)| [p.x, p.y, p.z, n.x, n.y, n.z].map(|v| v as f32))
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> SurfaceSamples {
        SurfaceSamples {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
            source_face: indices.iter().map(|&i| self.source_face[i]).collect(),
            fallback: self.fallback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    NearSurface,
    UniformVolume,
    Surface,
}

impl Provenance {
    /// Numeric tag used in serialized arrays.
    pub fn code(self) -> u8 {
        match self {
            Provenance::NearSurface => 0,
            Provenance::UniformVolume => 1,
            Provenance::Surface => 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuerySet {
    pub points: Vec<Vec3>,
    pub sdf: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Noise scale used to generate each point (0 for non-perturbed points).
    pub sigma: Vec<f64>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, tag: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == tag).count()
    }

    pub fn extend(&mut self, other: QuerySet) {
        self.points.extend(other.points);
        self.sdf.extend(other.sdf);
        self.provenance.extend(other.provenance);
        self.sigma.extend(other.sigma);
    }

    /// Row-major `M x 6` array: x, y, z, sdf, provenance code, sigma.
    pub fn to_rows(&self) -> Vec<f32> {
        (0..self.len())
            .flat_map(|i| {
                let p = self.points[i];
                [
                    p.x as f32,
                    p.y as f32,
                    p.z as f32,
                    self.sdf[i] as f32,
                    self.provenance[i].code() as f32,
                    self.sigma[i] as f32,
                ]
            })
            .collect()
    }

    fn with_sdf(points: Vec<Vec3>, sigma: Vec<f64>, tag: Provenance, bvh: &Bvh) -> QuerySet {
        let sdf = points.par_iter().map(|p| signed_distance(bvh, p)).collect();
        QuerySet {
            provenance: vec![tag; points.len()],
            points,
            sdf,
            sigma,
        }
    }
}

/// Runs `f(rng, chunk_len)` over consecutive chunks of `n` in parallel and
/// concatenates the results in chunk order.
fn chunked<T: Send>(
    stream: &RngStream,
    n: usize,
    f: impl Fn(&mut rand_chacha::ChaCha8Rng, usize) -> Vec<T> + Sync,
) -> Vec<T> {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            f(&mut stream.chunk_rng(c as u64), len)
        })
        .collect();
    parts.into_iter().flatten().collect()
}

fn area_distribution(mesh: &Mesh) -> Result<WeightedIndex<f64>> {
    let areas: Vec<f64> = (0..mesh.face_count()).map(|f| mesh.face_area(f)).collect();
    if areas.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroArea);
    }
    WeightedIndex::new(&areas).map_err(|_| Error::ZeroArea)
}

/// Uniform point on triangle `abc` from two uniform variates.
fn triangle_point(a: &Vec3, b: &Vec3, c: &Vec3, r1: f64, r2: f64) -> Vec3 {
    let s = r1.sqrt();
    a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
}

/// Area-uniform surface points carrying their face normals.
pub fn sample_surface_uniform(mesh: &Mesh, n: usize, stream: &RngStream) -> Result<SurfaceSamples> {
    let dist = area_distribution(mesh)?;
    let rows = chunked(stream, n, |rng, len| {
        (0..len)
            .map(|_| {
                let f = dist.sample(rng);
                let [a, b, c] = mesh.triangle(f);
                let p = triangle_point(&a, &b, &c, rng.random(), rng.random());
                (p, f as u32)
            })
            .collect()
    });
    Ok(collect_surface(mesh, rows, false))
}

fn collect_surface(mesh: &Mesh, rows: Vec<(Vec3, u32)>, fallback: bool) -> SurfaceSamples {
    let mut out = SurfaceSamples {
        fallback,
        ..Default::default()
    };
    for (p, f) in rows {
        out.positions.push(p);
        out.normals.push(mesh.face_normal(f as usize));
        out.source_face.push(f);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpEdge {
    pub a: u32,
    pub b: u32,
    pub faces: [u32; 2],
    /// Angle between the two face normals, radians.
    pub angle: f64,
}

/// Edges shared by exactly two faces whose normals differ by more than
/// `threshold_deg`, sorted by vertex pair.
pub fn sharp_edges(mesh: &Mesh, threshold_deg: f64) -> Vec<SharpEdge> {
    let mut incident: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            incident.entry((a.min(b), a.max(b))).or_default().push(fi as u32);
        }
    }
    let tau = threshold_deg.to_radians();
    let mut edges: Vec<SharpEdge> = incident
        .into_iter()
        .filter(|(_, fs)| fs.len() == 2)
        .filter_map(|((a, b), fs)| {
            let n0 = mesh.face_normal(fs[0] as usize);
            let n1 = mesh.face_normal(fs[1] as usize);
            let angle = n0.dot(&n1).clamp(-1.0, 1.0).acos();
            (angle > tau).then_some(SharpEdge {
                a,
                b,
                faces: [fs[0], fs[1]],
                angle,
            })
        })
        .collect();
    edges.sort_unstable_by_key(|e| (e.a, e.b));
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpConfig {
    pub threshold_deg: f64,
    pub offset: f64,
}

impl Default for SharpConfig {
    fn default() -> Self {
        SharpConfig {
            threshold_deg: SHARP_ANGLE_DEG,
            offset: SHARP_OFFSET,
        }
    }
}

/// Importance samples around sharp edges, weighted by edge length times the
/// dihedral excess over the threshold. Each sample is moved off its edge
/// into one incident face by up to `offset`, stopping at the face border.
pub fn sample_surface_sharp(
    mesh: &Mesh,
    n: usize,
    config: &SharpConfig,
    stream: &RngStream,
) -> Result<SurfaceSamples> {
    let edges = sharp_edges(mesh, config.threshold_deg);
    let tau = config.threshold_deg.to_radians();
    let weights: Vec<f64> = edges
        .iter()
        .map(|e| {
            let len = (mesh.vertices()[e.a as usize] - mesh.vertices()[e.b as usize]).norm();
            len * (e.angle - tau)
        })
        .collect();
    let dist = match WeightedIndex::new(&weights) {
        Ok(d) if !edges.is_empty() => d,
        _ => {
            let mut s = sample_surface_uniform(mesh, n, stream)?;
            s.fallback = true;
            return Ok(s);
        }
    };
    let v = mesh.vertices();
    let rows = chunked(stream, n, |rng, len| {
        (0..len)
            .map(|_| {
                let e = &edges[dist.sample(rng)];
                let (a, b) = (v[e.a as usize], v[e.b as usize]);
                let p = a + (b - a) * rng.random::<f64>();
                let face = e.faces[rng.random_range(0..2)];
                let delta = rng.random::<f64>() * config.offset;
                (offset_into_face(mesh, face as usize, &p, &a, &b, delta), face)
            })
            .collect()
    });
    Ok(collect_surface(mesh, rows, false))
}

/// Moves `p` (on edge `ab` of `face`) perpendicular to the edge into the face
/// by `delta`, clamped to the face.
fn offset_into_face(mesh: &Mesh, face: usize, p: &Vec3, a: &Vec3, b: &Vec3, delta: f64) -> Vec3 {
    let [t0, t1, t2] = mesh.triangle(face);
    let n = mesh.face_normal(face);
    let centroid = (t0 + t1 + t2) / 3.0;
    let mut dir = n.cross(&(b - a)).normalize();
    if dir.dot(&(centroid - p)) < 0.0 {
        dir = -dir;
    }
    // Barycentric coordinates are affine in the step length; the largest step
    // keeping all of them non-negative is where the ray leaves the face.
    let bary = |q: &Vec3| barycentric(q, &t0, &t1, &t2);
    let l0 = bary(p);
    let dl = bary(&(p + dir)) - l0;
    let mut t_max = f64::INFINITY;
    for i in 0..3 {
        if dl[i] < 0.0 {
            t_max = t_max.min((l0[i].max(0.0)) / -dl[i]);
        }
    }
    p + dir * delta.min(t_max)
}

fn barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    Vec3::new(1.0 - v - w, v, w)
}

/// Surface points perturbed by isotropic Gaussian noise, the first half with
/// `sigmas[0]` and the rest with `sigmas[1]`, clamped to `[-1, 1]^3`.
pub fn sample_near_surface(
    mesh: &Mesh,
    bvh: &Bvh,
    n: usize,
    sigmas: [f64; 2],
    stream: &RngStream,
) -> Result<QuerySet> {
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("invalid noise scales {sigmas:?}")));
    }
    let dist = area_distribution(mesh)?;
    let fine = n / 2;
    let rows = chunked(stream, n, |rng, len| {
        (0..len)
            .map(|_| {
                let f = dist.sample(rng);
                let [a, b, c] = mesh.triangle(f);
                let p = triangle_point(&a, &b, &c, rng.random(), rng.random());
                let z = Vec3::new(
                    rng.sample(rand_distr::StandardNormal),
                    rng.sample(rand_distr::StandardNormal),
                    rng.sample(rand_distr::StandardNormal),
                );
                (p, z)
            })
            .collect::<Vec<(Vec3, Vec3)>>()
    });
    let mut points = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for (i, (p, z)) in rows.into_iter().enumerate() {
        let s = if i < fine { sigmas[0] } else { sigmas[1] };
        points.push((p + z * s).map(|v| v.clamp(-1.0, 1.0)));
        sigma.push(s);
    }
    Ok(QuerySet::with_sdf(points, sigma, Provenance::NearSurface, bvh))
}

/// Points uniform in `[-1, 1]^3`.
pub fn sample_volume_uniform(bvh: &Bvh, n: usize, stream: &RngStream) -> QuerySet {
    let points = chunked(stream, n, |rng, len| {
        (0..len)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                )
            })
            .collect()
    });
    QuerySet::with_sdf(points, vec![0.0; n], Provenance::UniformVolume, bvh)
}

/// Which set joins the near-surface points in the query set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryComposition {
    #[default]
    NearUniform,
    NearSurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub n_near: usize,
    pub n_uniform: usize,
    pub sigmas: [f64; 2],
    pub composition: QueryComposition,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            n_near: 249_856,
            n_uniform: 249_856,
            sigmas: NEAR_SIGMAS,
            composition: QueryComposition::NearUniform,
        }
    }
}

/// Near-surface points followed by either uniform volume points or exact
/// surface points, each drawn from its own stream of `seed`.
pub fn build_query_set(mesh: &Mesh, bvh: &Bvh, config: &QueryConfig, seed: u64) -> Result<QuerySet> {
    let mut q = sample_near_surface(
        mesh,
        bvh,
        config.n_near,
        config.sigmas,
        &RngStream::new(seed, StreamId::Near),
    )?;
    match config.composition {
        QueryComposition::NearUniform => q.extend(sample_volume_uniform(
            bvh,
            config.n_uniform,
            &RngStream::new(seed, StreamId::Volume),
        )),
        QueryComposition::NearSurface => {
            let s = sample_surface_uniform(mesh, config.n_uniform, &RngStream::new(seed, StreamId::Surface))?;
            q.extend(QuerySet::with_sdf(
                s.positions,
                vec![0.0; config.n_uniform],
                Provenance::Surface,
                bvh,
            ));
        }
    }
    Ok(q)
}

/// Uniform and sharp surface sets drawn from their own streams of `seed`.
pub fn sample_surface_sets(
    mesh: &Mesh,
    n_uniform: usize,
    n_sharp: usize,
    sharp: &SharpConfig,
    seed: u64,
) -> Result<(SurfaceSamples, SurfaceSamples)> {
    let u = sample_surface_uniform(mesh, n_uniform, &RngStream::new(seed, StreamId::Surface))?;
    let s = sample_surface_sharp(mesh, n_sharp, sharp, &RngStream::new(seed, StreamId::Sharp))?;
    Ok((u, s))
}
