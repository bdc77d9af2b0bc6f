use forge_core::camera::*;
use nalgebra::Point3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest circular gap between sorted values in [0, 1).
fn max_circular_gap(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let wrap = v[0] + 1.0 - v[v.len() - 1];
    v.windows(2).map(|w| w[1] - w[0]).fold(wrap, f64::max)
}

fn max_gap_2d(points: &[(f64, f64)]) -> f64 {
    let a = max_circular_gap(points.iter().map(|p| p.0).collect());
    let b = max_circular_gap(points.iter().map(|p| p.1).collect());
    a.max(b)
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

fn ks_uniform(mut v: Vec<f64>, lo: f64, hi: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn hammersley_beats_median_random_gap() {
    let n = 150;
    let ham: Vec<(f64, f64)> = (0..n).map(|i| hammersley_point(i, n, (0.0, 0.0))).collect();
    let g = max_gap_2d(&ham);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut random: Vec<f64> = (0..100)
        .map(|_| {
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
            max_gap_2d(&pts)
        })
        .collect();
    random.sort_by(f64::total_cmp);
    let median = 0.5 * (random[49] + random[50]);
    assert!(g < median, "hammersley {g} vs median {median}");
    // Circular gaps ignore the offset, so every rig shares the statistic.
    let shifted: Vec<(f64, f64)> = (0..n).map(|i| hammersley_point(i, n, (0.37, 0.81))).collect();
    assert!((max_gap_2d(&shifted) - g).abs() < 1e-12);
}

#[test]
fn sphere_z_is_uniform() {
    let ps: Vec<f64> = (0..100u64)
        .map(|seed| {
            let rig = build_condition_rig(150, seed, (64, 64), None);
            let z: Vec<f64> = rig.cameras.iter().map(|c| c.position.z / c.radius).collect();
            ks_p_value(ks_uniform(z, -1.0, 1.0), 150)
        })
        .collect();
    let mean = ps.iter().sum::<f64>() / ps.len() as f64;
    assert!(mean > 0.01, "mean p {mean}");
}

#[test]
fn ks_helper_matches_known_values() {
    // Critical value for alpha = 0.05 at large n is about 1.358 / sqrt(n).
    let n = 10_000;
    let p = ks_p_value(1.358 / (n as f64).sqrt(), n);
    assert!((p - 0.05).abs() < 0.002, "{p}");
}

#[test]
fn rig_radii_follow_framing_law() {
    for seed in 0..20 {
        let rig = build_condition_rig(150, seed, (512, 512), None);
        assert_eq!(rig.cameras.len(), 150);
        for c in &rig.cameras {
            let law = (3f64.sqrt() / 2.0) / (c.fov_deg.to_radians() / 2.0).sin();
            assert!((c.radius - law).abs() < 1e-6);
            assert!((1.51 - 0.005..=9.94 + 0.01).contains(&c.radius));
            assert!((10.0..=70.0).contains(&c.fov_deg));
            assert!(((c.position - c.target).norm() - c.radius).abs() < 1e-9);
            assert_eq!((c.width, c.height), (512, 512));
        }
    }
}

#[test]
fn rig_is_seed_deterministic() {
    let a = build_condition_rig(150, 7, (512, 512), None);
    let b = build_condition_rig(150, 7, (512, 512), None);
    assert_eq!(a, b);
    let c = build_condition_rig(150, 8, (512, 512), None);
    assert_ne!(a.offset, c.offset);
    let json = serde_json::to_string(&a).unwrap();
    let back: ConditionRig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
}

#[test]
fn point_light_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let points = (0..n)
        .filter(|_| matches!(sample_reference_view(&mut rng).1, LightSpec::Point { .. }))
        .count();
    let frac = points as f64 / n as f64;
    assert!((frac - 0.30).abs() <= 0.02, "{frac}");
}

proptest! {
    #[test]
    fn look_at_is_rigid(el in -89.0f64..89.0, az in 0.0f64..360.0, fov in 10.0f64..70.0) {
        let spec = CameraSpec::spherical(el, az, radius_for_fov(fov, BOUND_RADIUS), fov, (32, 32));
        let view = look_at(&spec).unwrap();
        let r = view.rotation.to_rotation_matrix();
        let m = r.matrix();
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).amax() < 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        let t = view.transform_point(&Point3::from(spec.target));
        prop_assert!((t.coords - nalgebra::Vector3::new(0.0, 0.0, -spec.radius)).amax() < 1e-9);
        let back = view.inverse().transform_point(&Point3::origin());
        prop_assert!((back.coords - spec.position).amax() < 1e-9);
    }

    #[test]
    fn radical_inverse_round_trips_digits(i in 0u64..(1 << 20)) {
        // Reversing 20 bits of i gives the same fraction times 2^20.
        let r = radical_inverse(2, i);
        let rev = (i.reverse_bits() >> 44) as f64 / (1u64 << 20) as f64;
        prop_assert_eq!(r, rev);
    }
}
