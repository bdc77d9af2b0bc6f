//! Bounding volume hierarchy over a triangle mesh.
//!
//! Built with a binned surface-area heuristic (leaves hold at most
//! [`MAX_LEAF`] triangles). Every node covers a contiguous range of the
//! leaf-ordered triangle array, which lets each node carry a *cap*: a
//! triangle fan closing the boundary of the node's surface patch. For a query
//! outside a node's box the patch and the reversed cap form a closed surface
//! that the query does not enclose, so the patch's winding number equals the
//! cap's. Caps smaller than their patch make the winding number exact and
//! sub-linear.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::{Aabb, Mesh, Vec3};

use super::geom::{closest_point_on_triangle, ray_triangle, solid_angle};

pub const MAX_LEAF: usize = 4;
const SAH_BINS: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// First triangle of the node's range in leaf order.
    start: u32,
    count: u32,
    /// Child indices; `u32::MAX` for leaves.
    left: u32,
    right: u32,
    cap_start: u32,
    cap_len: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == u32::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    pub point: Vec3,
    pub distance: f64,
    /// Face index in the source mesh.
    pub face: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub face: usize,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle corners in leaf order.
    tris: Vec<[Vec3; 3]>,
    /// Source face index for each leaf-ordered triangle.
    face_ids: Vec<u32>,
    /// Unit normals in leaf order, for a plane-distance lower bound.
    leaf_normals: Vec<Vec3>,
    /// Unit normals indexed by source face.
    face_normals: Vec<Vec3>,
    caps: Vec<[Vec3; 3]>,
    /// Total length of the net boundary chain, counted with multiplicity.
    boundary_length: f64,
}

struct BuildTri {
    bounds: Aabb,
    centroid: Vec3,
    face: u32,
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        if mesh.face_count() == 0 {
            return Err(Error::NoValidFaces);
        }
        let mut items: Vec<BuildTri> = (0..mesh.face_count())
            .map(|f| {
                let t = mesh.triangle(f);
                let bounds = Aabb::from_points(t.iter()).expect("three points");
                BuildTri {
                    bounds,
                    centroid: (t[0] + t[1] + t[2]) / 3.0,
                    face: f as u32,
                }
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * items.len() / MAX_LEAF + 1);
        build_node(&mut nodes, &mut items, 0);

        let face_ids: Vec<u32> = items.iter().map(|t| t.face).collect();
        let tris = face_ids.iter().map(|&f| mesh.triangle(f as usize)).collect();
        let face_normals: Vec<Vec3> = (0..mesh.face_count()).map(|f| mesh.face_normal(f)).collect();
        let leaf_normals = face_ids.iter().map(|&f| face_normals[f as usize]).collect();
        let mut bvh = Bvh {
            nodes,
            tris,
            face_ids,
            leaf_normals,
            face_normals,
            caps: Vec::new(),
            boundary_length: 0.0,
        };
        bvh.build_caps(mesh);
        Ok(bvh)
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Unit normal of a source-mesh face.
    pub fn face_normal(&self, face: usize) -> Vec3 {
        self.face_normals[face]
    }

    /// Upper bound on the winding-number gradient at points whose distance
    /// to the surface is at least `dist`. Away from the surface the gradient
    /// depends only on the boundary chain, so closed meshes give zero.
    pub fn winding_gradient_bound(&self, dist: f64) -> f64 {
        if self.boundary_length == 0.0 {
            0.0
        } else {
            self.boundary_length / (4.0 * PI * dist * dist)
        }
    }

    fn build_caps(&mut self, mesh: &Mesh) {
        let mut caps = Vec::new();
        let vids: Vec<[u32; 3]> = self
            .face_ids
            .iter()
            .map(|&f| mesh.faces()[f as usize])
            .collect();
        let verts = mesh.vertices();
        self.boundary_length = net_edges(&vids)
            .iter()
            .map(|&(a, b, net)| {
                (verts[a as usize] - verts[b as usize]).norm() * net.unsigned_abs() as f64
            })
            .sum();
        for node in self.nodes.iter_mut() {
            node.cap_start = caps.len() as u32;
            node.cap_len = u32::MAX;
            if node.is_leaf() {
                continue;
            }
            let range = node.start as usize..(node.start + node.count) as usize;
            let edges = net_edges(&vids[range]);
            let center = node.bounds.center();
            let first = caps.len();
            for &(lo, hi, net) in &edges {
                // Patch edge a->b is closed by the cap triangle (b, a, center).
                let (a, b) = if net > 0 { (lo, hi) } else { (hi, lo) };
                for _ in 0..net.unsigned_abs() {
                    caps.push([verts[b as usize], verts[a as usize], center]);
                }
                if caps.len() - first >= node.count as usize {
                    break;
                }
            }
            let len = caps.len() - first;
            if len < node.count as usize {
                node.cap_len = len as u32;
            } else {
                caps.truncate(first);
            }
        }
        self.caps = caps;
    }

    /// Nearest surface point; ties on distance go to the lowest face index.
    pub fn closest_point(&self, q: &Vec3) -> ClosestHit {
        self.closest_point_within(q, f64::INFINITY)
    }

    /// Same result as [`Bvh::closest_point`]; `max_dist` is a pruning hint
    /// and a too-small value only costs a second search.
    pub fn closest_point_within(&self, q: &Vec3, max_dist: f64) -> ClosestHit {
        let mut best_d2 = max_dist * max_dist;
        let mut best_point = Vec3::zeros();
        let mut best_face = u32::MAX;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].bounds.distance_squared(q)));
        while let Some((ni, d2)) = stack.pop() {
            if d2 > best_d2 {
                continue;
            }
            let node = &self.nodes[ni as usize];
            if node.is_leaf() {
                for i in node.start..node.start + node.count {
                    let [a, b, c] = &self.tris[i as usize];
                    let plane = self.leaf_normals[i as usize].dot(&(q - a));
                    if plane * plane > best_d2 * (1.0 + 1e-12) {
                        continue;
                    }
                    let p = closest_point_on_triangle(q, a, b, c);
                    let pd2 = (p - q).norm_squared();
                    let face = self.face_ids[i as usize];
                    if pd2 < best_d2 || (pd2 == best_d2 && face < best_face) {
                        best_d2 = pd2;
                        best_point = p;
                        best_face = face;
                    }
                }
                continue;
            }
            let l = node.left;
            let r = node.right;
            let dl = self.nodes[l as usize].bounds.distance_squared(q);
            let dr = self.nodes[r as usize].bounds.distance_squared(q);
            // Push the farther child first so the nearer one is popped next.
            if dl <= dr {
                stack.push((r, dr));
                stack.push((l, dl));
            } else {
                stack.push((l, dl));
                stack.push((r, dr));
            }
        }
        if best_face == u32::MAX && max_dist.is_finite() {
            // The bound was too tight; nothing was found within it.
            return self.closest_point(q);
        }
        ClosestHit {
            point: best_point,
            distance: best_d2.sqrt(),
            face: best_face as usize,
        }
    }

    /// Generalized winding number: total signed solid angle over `4*pi`.
    pub fn winding_number(&self, q: &Vec3) -> f64 {
        let mut sum = 0.0;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.cap_len != u32::MAX && node.bounds.distance_squared(q) > 0.0 {
                let caps = &self.caps[node.cap_start as usize..(node.cap_start + node.cap_len) as usize];
                for [a, b, c] in caps {
                    // The cap is stored reversed; its angle negated equals
                    // the patch's.
                    sum -= solid_angle(q, a, b, c);
                }
                continue;
            }
            if node.is_leaf() {
                for [a, b, c] in &self.tris[node.start as usize..(node.start + node.count) as usize] {
                    sum += solid_angle(q, a, b, c);
                }
                continue;
            }
            stack.push(node.right);
            stack.push(node.left);
        }
        sum / (4.0 * PI)
    }

    /// Direct O(F) winding-number sum over all triangles, in leaf order.
    pub fn winding_number_direct(&self, q: &Vec3) -> f64 {
        self.tris
            .iter()
            .map(|[a, b, c]| solid_angle(q, a, b, c))
            .sum::<f64>()
            / (4.0 * PI)
    }

    /// Nearest ray hit with `t` in `(t_min, t_max)`; ties go to the lowest
    /// face index.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<RayHit> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best_t = t_max;
        let mut best_face = u32::MAX;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        slab(&self.nodes[0].bounds, origin, &inv, t_min, best_t)?;
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.is_leaf() {
                for i in node.start..node.start + node.count {
                    let [a, b, c] = &self.tris[i as usize];
                    if let Some(t) = ray_triangle(origin, dir, a, b, c) {
                        let face = self.face_ids[i as usize];
                        if t > t_min && (t < best_t || (t == best_t && face < best_face)) {
                            best_t = t;
                            best_face = face;
                        }
                    }
                }
                continue;
            }
            let tl = slab(&self.nodes[node.left as usize].bounds, origin, &inv, t_min, best_t);
            let tr = slab(&self.nodes[node.right as usize].bounds, origin, &inv, t_min, best_t);
            match (tl, tr) {
                (Some(a), Some(b)) => {
                    if a <= b {
                        stack.push(node.right);
                        stack.push(node.left);
                    } else {
                        stack.push(node.left);
                        stack.push(node.right);
                    }
                }
                (Some(_), None) => stack.push(node.left),
                (None, Some(_)) => stack.push(node.right),
                (None, None) => {}
            }
        }
        (best_face != u32::MAX).then_some(RayHit {
            t: best_t,
            face: best_face as usize,
        })
    }

    /// Leaf triangle ranges, for structural checks.
    pub fn leaf_faces(&self) -> Vec<Vec<usize>> {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| {
                (n.start..n.start + n.count)
                    .map(|i| self.face_ids[i as usize] as usize)
                    .collect()
            })
            .collect()
    }

    /// Checks that every node box contains its children and leaf triangles.
    pub fn check_nesting(&self) -> bool {
        self.nodes.iter().all(|n| {
            if n.is_leaf() {
                (n.start..n.start + n.count).all(|i| {
                    self.tris[i as usize].iter().all(|p| n.bounds.contains(p))
                })
            } else {
                n.bounds.contains_box(&self.nodes[n.left as usize].bounds)
                    && n.bounds.contains_box(&self.nodes[n.right as usize].bounds)
            }
        })
    }
}

/// Undirected edges with nonzero net directed multiplicity, sorted by
/// vertex pair. Positive multiplicity means the edge runs low to high index.
fn net_edges(faces: &[[u32; 3]]) -> Vec<(u32, u32, i32)> {
    let mut edges: Vec<(u32, u32, i32)> = Vec::with_capacity(faces.len() * 3);
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if a < b {
                edges.push((a, b, 1));
            } else {
                edges.push((b, a, -1));
            }
        }
    }
    edges.sort_unstable_by_key(|&(a, b, _)| (a, b));
    let mut out = Vec::new();
    let mut i = 0;
    while i < edges.len() {
        let (lo, hi) = (edges[i].0, edges[i].1);
        let mut net = 0;
        while i < edges.len() && edges[i].0 == lo && edges[i].1 == hi {
            net += edges[i].2;
            i += 1;
        }
        if net != 0 {
            out.push((lo, hi, net));
        }
    }
    out
}

/// Ray/box entry parameter if the ray overlaps the box within `(t0, t1)`.
fn slab(b: &Aabb, origin: &Vec3, inv: &Vec3, t0: f64, t1: f64) -> Option<f64> {
    let mut lo = t0;
    let mut hi = t1;
    for i in 0..3 {
        let mut a = (b.min[i] - origin[i]) * inv[i];
        let mut c = (b.max[i] - origin[i]) * inv[i];
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        // NaN (0 * inf) means the origin lies on the slab plane: no constraint.
        if a.is_nan() || c.is_nan() {
            continue;
        }
        lo = lo.max(a);
        hi = hi.min(c);
        if lo > hi {
            return None;
        }
    }
    Some(lo)
}

fn build_node(nodes: &mut Vec<Node>, items: &mut [BuildTri], offset: usize) -> u32 {
    let bounds = items
        .iter()
        .fold(Aabb::empty(), |acc, t| acc.union(&t.bounds));
    let index = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        start: offset as u32,
        count: items.len() as u32,
        left: u32::MAX,
        right: u32::MAX,
        cap_start: 0,
        cap_len: u32::MAX,
    });
    if items.len() <= MAX_LEAF {
        return index;
    }
    let mid = split(items);
    let (lo, hi) = items.split_at_mut(mid);
    let left = build_node(nodes, lo, offset);
    let right = build_node(nodes, hi, offset + mid);
    nodes[index as usize].left = left;
    nodes[index as usize].right = right;
    index
}

/// Partitions `items` by the cheapest binned SAH plane; falls back to a
/// median split when centroids coincide or the heuristic cannot separate.
fn split(items: &mut [BuildTri]) -> usize {
    let cb = items.iter().fold(Aabb::empty(), |mut acc, t| {
        acc.grow(&t.centroid);
        acc
    });
    let extent = cb.extent();
    let mut best: Option<(f64, usize, usize)> = None;
    for axis in 0..3 {
        if extent[axis] <= 0.0 {
            continue;
        }
        let bin_of = |c: f64| {
            let b = ((c - cb.min[axis]) / extent[axis] * SAH_BINS as f64) as usize;
            b.min(SAH_BINS - 1)
        };
        let mut counts = [0usize; SAH_BINS];
        let mut boxes = [Aabb::empty(); SAH_BINS];
        for t in items.iter() {
            let b = bin_of(t.centroid[axis]);
            counts[b] += 1;
            boxes[b] = boxes[b].union(&t.bounds);
        }
        let mut right_area = [0.0; SAH_BINS];
        let mut right_count = [0usize; SAH_BINS];
        let mut acc = Aabb::empty();
        let mut n = 0;
        for b in (1..SAH_BINS).rev() {
            acc = acc.union(&boxes[b]);
            n += counts[b];
            right_area[b] = acc.surface_area();
            right_count[b] = n;
        }
        let mut acc = Aabb::empty();
        let mut n = 0;
        for b in 0..SAH_BINS - 1 {
            acc = acc.union(&boxes[b]);
            n += counts[b];
            let rn = right_count[b + 1];
            if n == 0 || rn == 0 {
                continue;
            }
            let cost = acc.surface_area() * n as f64 + right_area[b + 1] * rn as f64;
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, axis, b));
            }
        }
    }
    match best {
        Some((_, axis, bin)) => {
            let lo = cb.min[axis];
            let ext = extent[axis];
            let goes_left = |t: &BuildTri| {
                let b = ((t.centroid[axis] - lo) / ext * SAH_BINS as f64) as usize;
                b.min(SAH_BINS - 1) <= bin
            };
            partition(items, goes_left)
        }
        None => {
            let axis = extent.imax();
            let mid = items.len() / 2;
            items.select_nth_unstable_by(mid, |a, b| {
                a.centroid[axis]
                    .total_cmp(&b.centroid[axis])
                    .then(a.face.cmp(&b.face))
            });
            mid
        }
    }
}

/// Stable in-place partition; returns the size of the `true` group.
fn partition(items: &mut [BuildTri], pred: impl Fn(&BuildTri) -> bool) -> usize {
    let mut i = 0;
    for j in 0..items.len() {
        if pred(&items[j]) {
            items.swap(i, j);
            i += 1;
        }
    }
    i
}
