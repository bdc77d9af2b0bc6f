//! Per-triangle primitives shared by the BVH queries.

use crate::mesh::Vec3;

/// Queries closer than this to a triangle's supporting plane get the
/// principal-value solid angle of zero.
pub(crate) const ON_PLANE_EPS: f64 = 1e-12;

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Signed solid angle subtended by triangle `abc` at `q`; positive when `q`
/// lies behind the triangle's right-hand normal.
pub fn solid_angle(q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let ra = a - q;
    let rb = b - q;
    let rc = c - q;
    let det = ra.dot(&rb.cross(&rc));
    let n = (b - a).cross(&(c - a)).norm();
    if det.abs() <= ON_PLANE_EPS * n {
        return 0.0;
    }
    let (la, lb, lc) = (ra.norm(), rb.norm(), rc.norm());
    let denom = la * lb * lc + ra.dot(&rb) * lc + ra.dot(&rc) * lb + rb.dot(&rc) * la;
    2.0 * det.atan2(denom)
}

/// Ray/triangle intersection (two-sided). Returns the ray parameter.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = s.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&qv) * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Independent route: project onto the plane, keep it if inside, else
    /// take the best of the three edge projections.
    fn closest_by_projection(p: &Vec3, t: [Vec3; 3]) -> Vec3 {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0])).normalize();
        let proj = p - n * n.dot(&(p - t[0]));
        let inside = (0..3).all(|i| {
            let (u, v) = (t[i], t[(i + 1) % 3]);
            (v - u).cross(&(proj - u)).dot(&n) >= 0.0
        });
        if inside {
            return proj;
        }
        (0..3)
            .map(|i| {
                let (u, v) = (t[i], t[(i + 1) % 3]);
                let s = ((p - u).dot(&(v - u)) / (v - u).norm_squared()).clamp(0.0, 1.0);
                u + (v - u) * s
            })
            .min_by(|x, y| (x - p).norm().partial_cmp(&(y - p).norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn closest_point_matches_projection_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut r = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        for _ in 0..5000 {
            let t = [r(), r(), r()];
            let p = r() * 2.0;
            let a = closest_point_on_triangle(&p, &t[0], &t[1], &t[2]);
            let b = closest_by_projection(&p, t);
            assert!(((a - p).norm() - (b - p).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn solid_angle_of_octant_triangle() {
        // The triangle through the three unit axes covers one octant: 4pi/8.
        let (a, b, c) = (Vec3::x(), Vec3::y(), Vec3::z());
        let w = solid_angle(&Vec3::zeros(), &a, &b, &c);
        assert!((w - PI / 2.0).abs() < 1e-12);
        assert!((solid_angle(&Vec3::zeros(), &a, &c, &b) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn on_plane_queries_contribute_nothing() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        for q in [Vec3::new(0.2, 0.2, 0.0), Vec3::new(0.5, 0.0, 0.0), Vec3::zeros(), Vec3::new(3.0, 1.0, 0.0)] {
            assert_eq!(solid_angle(&q, &a, &b, &c), 0.0);
        }
    }

    #[test]
    fn ray_hits_and_misses() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let t = ray_triangle(&Vec3::new(0.2, 0.2, 1.0), &-Vec3::z(), &a, &b, &c).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!(ray_triangle(&Vec3::new(0.8, 0.8, 1.0), &-Vec3::z(), &a, &b, &c).is_none());
    }
}
