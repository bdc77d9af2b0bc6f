//! Marching-cubes extraction of level sets and watertightness checks.

mod tables;

use std::collections::HashMap;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{bake_sdf_grid, build_bvh, SdfGrid};
use crate::mesh::{compute_aabb, Aabb, Mesh, Vec3};

use tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};

/// Relative nudge applied to lattice values sitting exactly on the level.
const LEVEL_NUDGE: f64 = 1e-7;

/// Empty lattice cells kept between the mesh and each grid face.
pub const PADDING_CELLS: usize = 3;

/// Topology summary derived from face-edge incidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatertightReport {
    /// No edge has more than two incident faces.
    pub is_edge_manifold: bool,
    /// Every edge has exactly two incident faces.
    pub is_closed: bool,
    /// Every two-face edge is traversed once in each direction.
    pub is_consistently_oriented: bool,
    pub connected_components: usize,
    pub euler_characteristic: i64,
    pub boundary_edge_count: usize,
    pub vertex_count: usize,
    pub edge_count: usize,
    pub face_count: usize,
}

pub fn check_watertight(mesh: &Mesh) -> WatertightReport {
    // (lo, hi) -> (incidence count, net direction)
    let mut edges: HashMap<(u32, u32), (u32, i32)> = HashMap::with_capacity(mesh.face_count() * 2);
    let mut used = vec![false; mesh.vertex_count()];
    let mut uf = UnionFind::<u32>::new(mesh.vertex_count());
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            used[a as usize] = true;
            uf.union(a, b);
            let (key, dir) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
            let e = edges.entry(key).or_insert((0, 0));
            e.0 += 1;
            e.1 += dir;
        }
    }
    let boundary = edges.values().filter(|e| e.0 == 1).count();
    let is_edge_manifold = edges.values().all(|e| e.0 <= 2);
    let is_closed = !edges.is_empty() && edges.values().all(|e| e.0 == 2);
    let is_consistently_oriented = edges.values().all(|e| e.0 != 2 || e.1 == 0);
    let mut roots: Vec<u32> = (0..mesh.vertex_count() as u32)
        .filter(|&v| used[v as usize])
        .map(|v| uf.find(v))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    let v = used.iter().filter(|&&u| u).count();
    let e = edges.len();
    let f = mesh.face_count();
    WatertightReport {
        is_edge_manifold,
        is_closed,
        is_consistently_oriented,
        connected_components: roots.len(),
        euler_characteristic: v as i64 - e as i64 + f as i64,
        boundary_edge_count: boundary,
        vertex_count: v,
        edge_count: e,
        face_count: f,
    }
}

struct SlabOutput {
    /// Newly seen edge keys and their vertex positions, in first-use order.
    verts: Vec<(u64, Vec3)>,
    tris: Vec<[u64; 3]>,
}

/// Extracts the `level` set as a welded triangle mesh whose faces point
/// toward increasing field values. Corners below the level count as inside.
pub fn marching_cubes(grid: &SdfGrid, level: f64) -> Result<Mesh> {
    let (lo, hi) = grid.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    if !(level > lo && level < hi) {
        return Err(Error::EmptySurface {
            level,
            min: lo,
            max: hi,
        });
    }
    let nudge = LEVEL_NUDGE * (hi - lo);
    let [nx, ny, nz] = grid.resolution();
    let values: Vec<f64> = grid
        .values()
        .iter()
        .map(|&v| {
            let v = v as f64;
            if v == level {
                v + nudge
            } else {
                v
            }
        })
        .collect();
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

    let slabs: Vec<SlabOutput> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut out = SlabOutput {
                verts: Vec::new(),
                tris: Vec::new(),
            };
            let mut seen: HashMap<u64, ()> = HashMap::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut corner = [0f64; 8];
                    let mut case = 0usize;
                    for (c, o) in CORNER_OFFSETS.iter().enumerate() {
                        corner[c] = values[idx(i + o[0], j + o[1], k + o[2])];
                        if corner[c] < level {
                            case |= 1 << c;
                        }
                    }
                    let mask = EDGE_TABLE[case];
                    if mask == 0 {
                        continue;
                    }
                    let mut keys = [0u64; 12];
                    for (e, &(c0, c1)) in EDGE_CORNERS.iter().enumerate() {
                        if mask & (1 << e) == 0 {
                            continue;
                        }
                        // Orient every edge from its lower lattice corner.
                        let (a, b) = if CORNER_OFFSETS[c0] <= CORNER_OFFSETS[c1] { (c0, c1) } else { (c1, c0) };
                        let oa = CORNER_OFFSETS[a];
                        let axis = (0..3).find(|&d| CORNER_OFFSETS[b][d] != oa[d]).unwrap();
                        let (li, lj, lk) = (i + oa[0], j + oa[1], k + oa[2]);
                        let key = idx(li, lj, lk) as u64 * 3 + axis as u64;
                        keys[e] = key;
                        if seen.insert(key, ()).is_none() {
                            let (va, vb) = (corner[a], corner[b]);
                            let t = (level - va) / (vb - va);
                            let mut p = grid.point(li, lj, lk);
                            p[axis] += t * grid.spacing()[axis];
                            out.verts.push((key, p));
                        }
                    }
                    let row = &TRI_TABLE[case];
                    for t in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                        // The table winds faces toward the inside corners.
                        out.tris.push([keys[t[0] as usize], keys[t[2] as usize], keys[t[1] as usize]]);
                    }
                }
            }
            out
        })
        .collect();

    let mut index: HashMap<u64, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for slab in slabs {
        for (key, p) in slab.verts {
            index.entry(key).or_insert_with(|| {
                vertices.push(p);
                (vertices.len() - 1) as u32
            });
        }
        faces.extend(slab.tris.iter().map(|t| t.map(|k| index[&k])));
    }
    Ok(Mesh::from_trusted(vertices, faces))
}

/// Grid box around `mesh` leaving [`PADDING_CELLS`] empty cells on every
/// side at the given resolution.
pub fn padded_bounds(mesh: &Mesh, resolution: [usize; 3]) -> Result<Aabb> {
    if resolution.iter().any(|&n| n <= 2 * PADDING_CELLS + 1) {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution:?} too small for {PADDING_CELLS} padding cells"
        )));
    }
    let b = compute_aabb(mesh)?;
    let floor = 1e-3 * b.max_extent().max(f64::MIN_POSITIVE);
    let c = b.center();
    let mut half = Vec3::zeros();
    for a in 0..3 {
        let ext = b.extent()[a].max(floor);
        let cells = (resolution[a] - 1) as f64;
        half[a] = 0.5 * ext / (1.0 - 2.0 * PADDING_CELLS as f64 / cells);
    }
    Ok(Aabb::new(c - half, c + half))
}

/// Rebuilds `mesh` as the zero set of its winding-number signed distance:
/// bake on a padded grid, force the outer lattice shell to the exterior and
/// extract. The result is closed whenever the winding field has an interior.
pub fn make_watertight(mesh: &Mesh, resolution: [usize; 3]) -> Result<Mesh> {
    let grid = watertight_grid(mesh, resolution)?;
    marching_cubes(&grid, 0.0)
}

/// The signed-distance grid consumed by [`make_watertight`].
pub fn watertight_grid(mesh: &Mesh, resolution: [usize; 3]) -> Result<SdfGrid> {
    let bounds = padded_bounds(mesh, resolution)?;
    let bvh = build_bvh(mesh)?;
    let grid = bake_sdf_grid(&bvh, resolution, bounds)?;
    let [nx, ny, nz] = resolution;
    let mut values = grid.values().to_vec();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let shell = i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                if shell {
                    let v = &mut values[i + nx * (j + ny * k)];
                    *v = v.abs();
                }
            }
        }
    }
    SdfGrid::new(resolution, bounds, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::f64::consts::PI;

    fn sphere_field(r: f64, n: usize) -> SdfGrid {
        SdfGrid::from_fn([n; 3], Aabb::cube(1.0), |p| p.norm() - r).unwrap()
    }

    #[test]
    fn tables_are_face_consistent() {
        // Every cube face must be cut the same way by both cells sharing it:
        // segments on a face depend only on its four corner signs, and on
        // ambiguous faces the inside corners are always separated.
        let faces: [[usize; 4]; 6] = [
            [0, 1, 2, 3], [4, 5, 6, 7], [0, 1, 5, 4],
            [3, 2, 6, 7], [0, 3, 7, 4], [1, 2, 6, 5],
        ];
        let on_face = |f: &[usize; 4], e: usize| {
            let (a, b) = EDGE_CORNERS[e];
            f.contains(&a) && f.contains(&b)
        };
        for case in 0..256usize {
            let mut count: HashMap<(i8, i8), u32> = HashMap::new();
            let mut mask = 0u16;
            for t in TRI_TABLE[case].chunks_exact(3).take_while(|t| t[0] >= 0) {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    mask |= 1 << a;
                    *count.entry((a.min(b), a.max(b))).or_default() += 1;
                }
            }
            assert_eq!(mask, EDGE_TABLE[case]);
            assert!(count.values().all(|&c| c <= 2));
            let inside = |c: usize| case >> c & 1 == 1;
            for f in &faces {
                let segs: Vec<(i8, i8)> = count
                    .iter()
                    .filter(|(_, &c)| c == 1)
                    .map(|(&e, _)| e)
                    .filter(|&(a, b)| on_face(f, a as usize) && on_face(f, b as usize))
                    .collect();
                let pattern: Vec<bool> = f.iter().map(|&c| inside(c)).collect();
                let crossings = (0..4).filter(|&i| pattern[i] != pattern[(i + 1) % 4]).count();
                assert_eq!(segs.len(), crossings / 2, "case {case}");
                if crossings == 4 {
                    // The segment near each inside corner joins its two edges.
                    for &c in f.iter().filter(|&&c| inside(c)) {
                        let adj: Vec<i8> = (0..12)
                            .filter(|&e| on_face(f, e) && (EDGE_CORNERS[e].0 == c || EDGE_CORNERS[e].1 == c))
                            .map(|e| e as i8)
                            .collect();
                        assert!(segs.contains(&(adj[0].min(adj[1]), adj[0].max(adj[1]))), "case {case}");
                    }
                }
            }
        }
    }

    #[test]
    fn check_watertight_examples() {
        let cube = check_watertight(&fixtures::cube(0.5));
        assert!(cube.is_closed && cube.is_edge_manifold && cube.is_consistently_oriented);
        assert_eq!(cube.euler_characteristic, 2);
        assert_eq!(cube.boundary_edge_count, 0);
        assert_eq!(cube.connected_components, 1);

        let tri = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let r = check_watertight(&tri);
        assert!(!r.is_closed);
        assert_eq!(r.boundary_edge_count, 3);

        assert_eq!(check_watertight(&fixtures::torus(1.0, 0.3, 16, 8)).euler_characteristic, 0);
        let wall = check_watertight(&fixtures::cube_with_internal_wall(0.5));
        assert!(!wall.is_closed);
        let pair = check_watertight(&fixtures::overlapping_spheres());
        assert_eq!(pair.connected_components, 2);
    }

    #[test]
    fn sphere_extraction() {
        let mesh = marching_cubes(&sphere_field(0.3, 128), 0.0).unwrap();
        let r = check_watertight(&mesh);
        assert!(r.is_closed && r.is_edge_manifold && r.is_consistently_oriented);
        assert_eq!(r.euler_characteristic, 2);
        assert_eq!(r.connected_components, 1);
        let exact = 4.0 / 3.0 * PI * 0.3f64.powi(3);
        let vol = mesh.signed_volume();
        assert!(vol > 0.0, "faces must point outward");
        assert!((vol - exact).abs() / exact < 0.01, "{vol} vs {exact}");
    }

    #[test]
    fn vertices_sit_on_the_level_set() {
        let g = SdfGrid::from_fn([33, 29, 31], Aabb::cube(1.0), |p| {
            (p.x * 3.0).sin() + (p.y * 2.0).cos() * p.z - 0.3
        })
        .unwrap();
        let mesh = marching_cubes(&g, 0.1).unwrap();
        let (lo, hi) = g.min_max();
        let tol = 1e-5 * (hi - lo) as f64;
        for v in mesh.vertices() {
            assert!((g.trilinear(v) - 0.1).abs() <= tol);
        }
    }

    #[test]
    fn constant_field_has_no_surface() {
        let g = SdfGrid::from_fn([4, 4, 4], Aabb::cube(1.0), |_| 1.0).unwrap();
        assert!(matches!(marching_cubes(&g, 0.0), Err(Error::EmptySurface { .. })));
    }

    #[test]
    fn exact_level_values_are_nudged() {
        // Planar field whose lattice hits the level exactly on a whole layer.
        let g = SdfGrid::from_fn([9, 9, 9], Aabb::cube(1.0), |p| p.z).unwrap();
        let mesh = marching_cubes(&g, 0.0).unwrap();
        assert!((0..mesh.face_count()).all(|f| mesh.face_area(f) > 0.0));
        assert!(check_watertight(&mesh).is_edge_manifold);
    }

    #[test]
    fn torus_extraction_has_genus_one() {
        let g = SdfGrid::from_fn([64; 3], Aabb::cube(1.0), |p| {
            let q = (p.x * p.x + p.y * p.y).sqrt() - 0.5;
            (q * q + p.z * p.z).sqrt() - 0.2
        })
        .unwrap();
        let r = check_watertight(&marching_cubes(&g, 0.0).unwrap());
        assert!(r.is_closed);
        assert_eq!(r.euler_characteristic, 0);
    }

    #[test]
    fn open_box_becomes_closed() {
        let out = make_watertight(&fixtures::open_box(0.5), [48; 3]).unwrap();
        let r = check_watertight(&out);
        assert!(r.is_closed && r.is_edge_manifold);
        assert!(out.signed_volume() > 0.0);
    }

    #[test]
    fn padded_bounds_leave_margin() {
        let cube = fixtures::cube(0.5);
        let b = padded_bounds(&cube, [128; 3]).unwrap();
        let cell = b.extent().x / 127.0;
        assert!((b.max.x - 0.5 - 3.0 * cell).abs() < 1e-12);
        assert!(padded_bounds(&cube, [7; 3]).is_err());
    }
}
