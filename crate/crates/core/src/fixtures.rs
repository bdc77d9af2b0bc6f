//! Procedural test shapes, including deliberately defective ones used to
//! exercise watertighting.

use std::collections::HashMap;

use crate::mesh::{Mesh, Vec3};

/// Axis-aligned cube `[-half, half]^3`, 8 vertices and 12 outward faces.
pub fn cube(half: f64) -> Mesh {
    let h = half;
    let v = vec![
        Vec3::new(-h, -h, -h),
        Vec3::new(h, -h, -h),
        Vec3::new(h, h, -h),
        Vec3::new(-h, h, -h),
        Vec3::new(-h, -h, h),
        Vec3::new(h, -h, h),
        Vec3::new(h, h, h),
        Vec3::new(-h, h, h),
    ];
    let f = vec![
        [0, 3, 2], [0, 2, 1], // -z
        [4, 5, 6], [4, 6, 7], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [3, 7, 6], [3, 6, 2], // +y
        [0, 4, 7], [0, 7, 3], // -x
        [1, 2, 6], [1, 6, 5], // +x
    ];
    Mesh::from_trusted(v, f)
}

/// Geodesic sphere from a subdivided icosahedron; `20 * 4^level` faces.
pub fn icosphere(level: u32, radius: f64) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::from_trusted(verts.into_iter().map(|v| v * radius).collect(), faces)
}

/// Torus around the z axis with `major` ring radius and `minor` tube radius.
pub fn torus(major: f64, minor: f64, rings: u32, sides: u32) -> Mesh {
    let mut v = Vec::with_capacity((rings * sides) as usize);
    for i in 0..rings {
        let u = i as f64 / rings as f64 * std::f64::consts::TAU;
        for j in 0..sides {
            let w = j as f64 / sides as f64 * std::f64::consts::TAU;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let idx = |i: u32, j: u32| (i % rings) * sides + (j % sides);
    let mut f = Vec::with_capacity((2 * rings * sides) as usize);
    for i in 0..rings {
        for j in 0..sides {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    Mesh::from_trusted(v, f)
}

/// Removes faces by predicate on their centroid.
pub fn without_faces(mesh: &Mesh, remove: impl Fn(&Vec3) -> bool) -> Mesh {
    let faces = (0..mesh.face_count())
        .filter(|&f| {
            let [a, b, c] = mesh.triangle(f);
            !remove(&((a + b + c) / 3.0))
        })
        .map(|f| mesh.faces()[f])
        .collect();
    Mesh::from_trusted(mesh.vertices().to_vec(), faces)
}

/// Unit cube missing its `+z` face.
pub fn open_box(half: f64) -> Mesh {
    without_faces(&cube(half), |c| c.z > half * 0.99)
}

/// Two overlapping spheres merged as an unwelded, self-intersecting soup.
pub fn overlapping_spheres() -> Mesh {
    let a = icosphere(3, 0.3).map_vertices(|p| p + Vec3::new(-0.15, 0.0, 0.0));
    let b = icosphere(3, 0.3).map_vertices(|p| p + Vec3::new(0.15, 0.0, 0.0));
    a.merged(&b)
}

/// Every face stored twice.
pub fn duplicated_faces(mesh: &Mesh) -> Mesh {
    let mut faces = mesh.faces().to_vec();
    faces.extend_from_slice(mesh.faces());
    Mesh::from_trusted(mesh.vertices().to_vec(), faces)
}

/// Reverses the faces whose centroid satisfies `pick`.
pub fn flip_patch(mesh: &Mesh, pick: impl Fn(&Vec3) -> bool) -> Mesh {
    let faces = (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            let face = mesh.faces()[f];
            if pick(&((a + b + c) / 3.0)) {
                [face[0], face[2], face[1]]
            } else {
                face
            }
        })
        .collect();
    Mesh::from_trusted(mesh.vertices().to_vec(), faces)
}

/// Splits every face onto its own three vertices, jittering them slightly so
/// neighbouring faces no longer meet exactly.
pub fn cracked_soup(mesh: &Mesh, jitter: f64) -> Mesh {
    let mut v = Vec::with_capacity(mesh.face_count() * 3);
    let mut f = Vec::with_capacity(mesh.face_count());
    for face in 0..mesh.face_count() {
        let base = v.len() as u32;
        for (k, p) in mesh.triangle(face).iter().enumerate() {
            // Deterministic pseudo-random jitter.
            let s = ((face * 3 + k) as f64 * 12.9898).sin() * 43758.5453;
            let d = Vec3::new(s.fract(), (s * 1.7).fract(), (s * 2.3).fract()) * jitter;
            v.push(p + d);
        }
        f.push([base, base + 1, base + 2]);
    }
    Mesh::from_trusted(v, f)
}

/// Two cubes touching along a single edge (non-manifold edge).
pub fn edge_touching_cubes() -> Mesh {
    let a = cube(0.2).map_vertices(|p| p + Vec3::new(-0.2, -0.2, 0.0));
    let b = cube(0.2).map_vertices(|p| p + Vec3::new(0.2, 0.2, 0.0));
    a.merged(&b)
}

/// Cube with an internal partition plane at `x = 0`.
pub fn cube_with_internal_wall(half: f64) -> Mesh {
    let wall = Mesh::from_trusted(
        vec![
            Vec3::new(0.0, -half, -half),
            Vec3::new(0.0, half, -half),
            Vec3::new(0.0, half, half),
            Vec3::new(0.0, -half, half),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    cube(half).merged(&wall)
}

/// Open strip of three quads meeting at a 90 degree edge (`x = 0`) and a
/// shallow 20 degree edge (`x = 1`), each edge of length 1.
pub fn wedge() -> Mesh {
    let bend = 20f64.to_radians();
    let v = vec![
        // vertical quad in the x = 0 plane, hanging below the fold
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(0.0, 1.0, -1.0),
        // fold edge (90 degrees)
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        // shallow edge at x = 1
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(1.0, 1.0, 0.0),
        // last quad tilted down by 20 degrees
        Vec3::new(1.0 + bend.cos(), 0.0, -bend.sin()),
        Vec3::new(1.0 + bend.cos(), 1.0, -bend.sin()),
    ];
    let f = vec![
        [0, 2, 3], [0, 3, 1],
        [2, 4, 5], [2, 5, 3],
        [4, 6, 7], [4, 7, 5],
    ];
    Mesh::from_trusted(v, f)
}
