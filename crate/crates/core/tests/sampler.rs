use forge_core::field::build_bvh;
use forge_core::fixtures;
use forge_core::mesh::{Mesh, Vec3};
use forge_core::sampler::*;
use proptest::prelude::*;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn stream(seed: u64, id: StreamId) -> RngStream {
    RngStream::new(seed, id)
}

/// Upper-tail p-value of Pearson's statistic for `observed` vs `expected`.
fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn point_to_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let t = ((p - a).dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
    (p - (a + (b - a) * t)).norm()
}

fn distance_to_triangle_plane_and_inside(p: &Vec3, t: [Vec3; 3]) -> (f64, bool) {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0])).normalize();
    let off = n.dot(&(p - t[0]));
    let proj = p - n * off;
    let inside = (0..3).all(|i| (t[(i + 1) % 3] - t[i]).cross(&(proj - t[i])).dot(&n) >= -1e-9);
    (off.abs(), inside)
}

#[test]
fn cube_faces_receive_equal_shares() {
    let n = 60_000;
    let s = sample_surface_uniform(&fixtures::cube(0.5), n, &stream(1, StreamId::Surface)).unwrap();
    let mut pairs = [0f64; 6];
    for f in &s.source_face {
        pairs[*f as usize / 2] += 1.0;
    }
    let expected = n as f64 / 6.0;
    for c in pairs {
        assert!((c - expected).abs() / expected < 0.05);
    }
    assert!(chi_square_p(&pairs, &[expected; 6]) > 0.01);
}

#[test]
fn single_triangle_sample_is_inside() {
    let m = Mesh::new(
        vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.5)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let s = sample_surface_uniform(&m, 1, &stream(9, StreamId::Surface)).unwrap();
    let (off, inside) = distance_to_triangle_plane_and_inside(&s.positions[0], m.triangle(0));
    assert!(off < 1e-12 && inside);
}

#[test]
fn area_ratio_one_to_three() {
    // Triangles of area 1 and 3.
    let m = Mesh::new(
        vec![
            Vec3::zeros(),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(8.0, 0.0, 0.0),
            Vec3::new(5.0, 2.0, 0.0),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    assert!((m.face_area(0) - 1.0).abs() < 1e-12 && (m.face_area(1) - 3.0).abs() < 1e-12);
    let s = sample_surface_uniform(&m, 100_000, &stream(3, StreamId::Surface)).unwrap();
    let second = s.source_face.iter().filter(|&&f| f == 1).count() as f64 / 1e5;
    assert!((second - 0.75).abs() < 0.02, "{second}");
}

#[test]
fn face_frequencies_follow_area() {
    let m = fixtures::torus(0.35, 0.15, 6, 5);
    let n = 100_000;
    let s = sample_surface_uniform(&m, n, &stream(5, StreamId::Surface)).unwrap();
    let mut obs = vec![0f64; m.face_count()];
    for f in &s.source_face {
        obs[*f as usize] += 1.0;
    }
    let total = m.surface_area();
    let exp: Vec<f64> = (0..m.face_count()).map(|f| m.face_area(f) / total * n as f64).collect();
    assert!(chi_square_p(&obs, &exp) > 0.01);
}

#[test]
fn zero_area_mesh_is_rejected() {
    let m = fixtures::without_faces(&fixtures::cube(0.5), |_| true);
    assert!(sample_surface_uniform(&m, 10, &stream(1, StreamId::Surface)).is_err());
}

fn cube_edges(h: f64) -> Vec<(Vec3, Vec3)> {
    let c = fixtures::cube(h);
    let v = c.vertices();
    let mut out = Vec::new();
    for i in 0..8 {
        for j in i + 1..8 {
            let d = v[i] - v[j];
            // Real cube edges differ in exactly one coordinate.
            if (0..3).filter(|&a| d[a] != 0.0).count() == 1 {
                out.push((v[i], v[j]));
            }
        }
    }
    out
}

#[test]
fn sharp_samples_hug_cube_edges() {
    let cube = fixtures::cube(0.5);
    let s = sample_surface_sharp(&cube, 20_000, &SharpConfig::default(), &stream(2, StreamId::Sharp)).unwrap();
    assert!(!s.fallback);
    let edges = cube_edges(0.5);
    assert_eq!(edges.len(), 12);
    let near = s
        .positions
        .iter()
        .filter(|p| edges.iter().any(|(a, b)| point_to_segment(p, a, b) <= 0.011))
        .count();
    assert!(near as f64 >= 0.95 * s.len() as f64);
    assert_eq!(sharp_edges(&cube, 30.0).len(), 12);
}

#[test]
fn smooth_sphere_falls_back_to_uniform() {
    let sphere = fixtures::icosphere(2, 0.4);
    assert!(sharp_edges(&sphere, 30.0).is_empty());
    let n = 50_000;
    let s = sample_surface_sharp(&sphere, n, &SharpConfig::default(), &stream(4, StreamId::Sharp)).unwrap();
    assert!(s.fallback);
    // Bucket faces into 20 groups and compare with area proportions.
    let groups = 20;
    let mut obs = vec![0f64; groups];
    let mut area = vec![0f64; groups];
    for f in 0..sphere.face_count() {
        area[f % groups] += sphere.face_area(f);
    }
    for f in &s.source_face {
        obs[*f as usize % groups] += 1.0;
    }
    let total: f64 = area.iter().sum();
    let exp: Vec<f64> = area.iter().map(|a| a / total * n as f64).collect();
    assert!(chi_square_p(&obs, &exp) > 0.01);
}

#[test]
fn wedge_samples_only_the_right_angle_edge() {
    let w = fixtures::wedge();
    let sharp = sharp_edges(&w, 30.0);
    assert_eq!(sharp.len(), 1);
    let s = sample_surface_sharp(&w, 5_000, &SharpConfig::default(), &stream(6, StreamId::Sharp)).unwrap();
    let (a, b) = (Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
    assert!(s.positions.iter().all(|p| point_to_segment(p, &a, &b) <= 0.01 + 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn surface_samples_lie_on_their_faces(seed in any::<u64>(), sharp in any::<bool>()) {
        let mesh = fixtures::torus(0.3, 0.1, 12, 4);
        let s = if sharp {
            sample_surface_sharp(&mesh, 500, &SharpConfig::default(), &stream(seed, StreamId::Sharp)).unwrap()
        } else {
            sample_surface_uniform(&mesh, 500, &stream(seed, StreamId::Surface)).unwrap()
        };
        for i in 0..s.len() {
            prop_assert!((s.normals[i].norm() - 1.0).abs() < 1e-6);
            let (off, inside) = distance_to_triangle_plane_and_inside(
                &s.positions[i],
                mesh.triangle(s.source_face[i] as usize),
            );
            prop_assert!(off < 1e-6 && inside);
        }
    }

    #[test]
    fn fps_matches_brute_force(seed in any::<u64>(), n in 1usize..512, k_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse integer lattice coordinates make exact distance ties common.
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(
                rng.random_range(0..6) as f64,
                rng.random_range(0..6) as f64,
                rng.random_range(0..3) as f64,
            ))
            .collect();
        let k = ((k_frac * 64.0) as usize).clamp(1, n.min(64));
        let start = rng.random_range(0..n);
        prop_assert_eq!(farthest_point_sampling(&pts, k, start).unwrap(), brute_fps(&pts, k, start));
    }
}

/// Recomputes every unselected point's distance to the whole selected set at
/// each step.
fn brute_fps(pts: &[Vec3], k: usize, start: usize) -> Vec<usize> {
    let mut sel = vec![start];
    while sel.len() < k {
        let mut best = None;
        for i in 0..pts.len() {
            if sel.contains(&i) {
                continue;
            }
            let d = sel.iter().map(|&j| (pts[i] - pts[j]).norm_squared()).fold(f64::INFINITY, f64::min);
            match best {
                Some((bd, _)) if d <= bd => {}
                _ => best = Some((d, i)),
            }
        }
        sel.push(best.unwrap().1);
    }
    sel
}

fn min_pairwise(pts: &[Vec3], idx: &[usize]) -> f64 {
    let mut m = f64::INFINITY;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            m = m.min((pts[idx[a]] - pts[idx[b]]).norm());
        }
    }
    m
}

#[test]
fn fps_dominates_random_subsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<Vec3> = (0..400)
        .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
        .collect();
    let k = 32;
    let fps = min_pairwise(&pts, &farthest_point_sampling(&pts, k, 0).unwrap());
    for _ in 0..100 {
        let idx = sample_indices(&mut rng, pts.len(), k).into_vec();
        assert!(fps >= min_pairwise(&pts, &idx));
    }
}

#[test]
fn near_surface_offsets_bound_sdf() {
    let mesh = fixtures::icosphere(4, 0.4);
    let bvh = build_bvh(&mesh).unwrap();
    let st = stream(7, StreamId::Near);
    let q = sample_near_surface(&mesh, &bvh, 20_000, NEAR_SIGMAS, &st).unwrap();
    // With zero noise the same stream yields the unperturbed base points.
    let base = sample_near_surface(&mesh, &bvh, 20_000, [0.0, 0.0], &st).unwrap();
    assert!(base.sdf.iter().all(|d| d.abs() < 1e-6));
    for i in 0..q.len() {
        let offset = (q.points[i] - base.points[i]).norm();
        assert!(q.sdf[i].abs() <= offset + 1e-9);
        assert!(q.points[i].iter().all(|c| (-1.0..=1.0).contains(c)));
    }
    assert_eq!(q.sigma.iter().filter(|&&s| s == 0.01).count(), 10_000);
    assert_eq!(q.sigma.iter().filter(|&&s| s == 0.05).count(), 10_000);
}

#[test]
fn volume_samples_are_centered_and_bounded() {
    let bvh = build_bvh(&fixtures::cube(0.5)).unwrap();
    let q = sample_volume_uniform(&bvh, 100_000, &stream(8, StreamId::Volume));
    assert_eq!(q.len(), 100_000);
    for a in 0..3 {
        let mean = q.points.iter().map(|p| p[a]).sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.01);
    }
    assert!(q.points.iter().all(|p| p.iter().all(|c| (-1.0..=1.0).contains(c))));
    assert!(q.sdf.iter().all(|d| d.is_finite()));
}

#[test]
fn default_query_set_counts_and_order_statistics() {
    let mesh = fixtures::icosphere(3, 0.4);
    let bvh = build_bvh(&mesh).unwrap();
    let cfg = QueryConfig::default();
    let q = build_query_set(&mesh, &bvh, &cfg, 99).unwrap();
    assert_eq!(q.len(), 499_712);
    assert_eq!(q.count(Provenance::NearSurface), 249_856);
    assert_eq!(q.count(Provenance::UniformVolume), 249_856);
    let median = |tag| {
        let mut v: Vec<f64> = (0..q.len())
            .filter(|&i| q.provenance[i] == tag)
            .map(|i| q.sdf[i].abs())
            .collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(median(Provenance::NearSurface) < median(Provenance::UniformVolume));

    let alt = QueryConfig {
        n_near: 100,
        n_uniform: 50,
        composition: QueryComposition::NearSurface,
        ..QueryConfig::default()
    };
    let q = build_query_set(&mesh, &bvh, &alt, 99).unwrap();
    assert_eq!(q.count(Provenance::Surface), 50);
    assert_eq!(q.count(Provenance::NearSurface), 100);
}

#[test]
fn sampling_is_independent_of_thread_count() {
    let mesh = fixtures::torus(0.3, 0.1, 30, 12);
    let bvh = build_bvh(&mesh).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let cfg = QueryConfig {
                    n_near: 30_000,
                    n_uniform: 20_000,
                    ..QueryConfig::default()
                };
                let q = build_query_set(&mesh, &bvh, &cfg, 5).unwrap();
                let (u, s) = sample_surface_sets(&mesh, 20_000, 20_000, &SharpConfig::default(), 5).unwrap();
                (q.to_rows(), u.to_rows(), s.to_rows())
            })
    };
    assert_eq!(run(1), run(3));
}
