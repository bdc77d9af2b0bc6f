use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Greedy max-min selection of `k` indices starting at `start`. Each step
/// takes the unselected point farthest from the selected set, lowest index
/// on ties.
pub fn farthest_point_sampling(points: &[Vec3], k: usize, start: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} of {} points",
            points.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(Error::InvalidArgument(format!("start index {start} out of range")));
    }
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut out = Vec::with_capacity(k);
    let mut current = start;
    loop {
        out.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        if out.len() == k {
            return Ok(out);
        }
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, (p, d)) in points.iter().zip(min_d2.iter_mut()).enumerate() {
            if *d == f64::NEG_INFINITY {
                continue;
            }
            let d2 = (p - c).norm_squared();
            if d2 < *d {
                *d = d2;
            }
            if *d > best_d2 {
                best_d2 = *d;
                best = i;
            }
        }
        current = best;
    }
}
