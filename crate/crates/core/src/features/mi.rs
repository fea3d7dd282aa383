//! Kraskov–Stögbauer–Grassberger mutual information (algorithm 1).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::digamma;

use super::FeatureError;

pub const DEFAULT_K: usize = 3;

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(PartialEq, PartialOrd)]
struct Dist(f64);
impl Eq for Dist {}
impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// MI estimate in nats with the default jitter seed.
pub fn mutual_information(x: &[f64], y: &[f64], k: usize) -> Result<f64, FeatureError> {
    mutual_information_seeded(x, y, k, 0)
}

/// KSG estimate `ψ(k) + ψ(N) − ⟨ψ(n_x+1) + ψ(n_y+1)⟩`, clamped at zero.
///
/// Distance ties are broken by jitter of `1e-10·σ` per variable. Jitter is
/// assigned by rank in the lexicographic (x, y) order, so the estimate does
/// not depend on row order.
pub fn mutual_information_seeded(x: &[f64], y: &[f64], k: usize, seed: u64) -> Result<f64, FeatureError> {
    let n = x.len();
    if k == 0 {
        return Err(FeatureError::InvalidParameter("k must be at least 1".into()));
    }
    if y.len() != n {
        return Err(FeatureError::LengthMismatch {
            left: n,
            right: y.len(),
        });
    }
    if n < 4 * k {
        return Err(FeatureError::InsufficientSamples { needed: 4 * k, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FeatureError::InvalidParameter("non-finite sample".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let (sx, sy) = (population_std(x), population_std(y));
    if sx == 0.0 || sy == 0.0 {
        // A constant carries no information.
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Points in lexicographic order, jittered.
    let pts: Vec<(f64, f64)> = order
        .iter()
        .map(|&i| {
            let jx: f64 = rng.random_range(-1.0..1.0);
            let jy: f64 = rng.random_range(-1.0..1.0);
            (x[i] + 1e-10 * sx * jx, y[i] + 1e-10 * sy * jy)
        })
        .collect();

    // Scan order by jittered x for neighbor search.
    let mut by_x: Vec<usize> = (0..n).collect();
    by_x.sort_by(|&a, &b| pts[a].0.total_cmp(&pts[b].0));
    let mut pos_in_x = vec![0; n];
    for (p, &i) in by_x.iter().enumerate() {
        pos_in_x[i] = p;
    }
    let xs: Vec<f64> = by_x.iter().map(|&i| pts[i].0).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    ys.sort_by(f64::total_cmp);

    // Strict |v − c| < eps, evaluated with the same subtraction as the
    // distance itself so the k-th neighbor is never counted.
    let count_within = |sorted: &[f64], c: f64, eps: f64| -> usize {
        let mut lo = sorted.partition_point(|&v| v < c - 2.0 * eps);
        while lo < sorted.len() && c - sorted[lo] >= eps {
            lo += 1;
        }
        let mut hi = sorted.partition_point(|&v| v <= c + 2.0 * eps);
        while hi > lo && sorted[hi - 1] - c >= eps {
            hi -= 1;
        }
        // Exclude the point itself.
        (hi - lo).saturating_sub(1)
    };

    let mut total = 0.0;
    let mut heap: BinaryHeap<Dist> = BinaryHeap::with_capacity(k + 1);
    for i in 0..n {
        heap.clear();
        let (xi, yi) = pts[i];
        let p = pos_in_x[i];
        let (mut lo, mut hi) = (p, p + 1);
        loop {
            let bound = if heap.len() == k {
                heap.peek().unwrap().0
            } else {
                f64::INFINITY
            };
            let take_left = match (lo > 0, hi < n) {
                (true, true) => xi - xs[lo - 1] <= xs[hi] - xi,
                (true, false) => true,
                (false, true) => false,
                (false, false) => break,
            };
            let (j, dx) = if take_left {
                lo -= 1;
                (by_x[lo], xi - xs[lo])
            } else {
                hi += 1;
                (by_x[hi - 1], xs[hi - 1] - xi)
            };
            // Candidates only get farther in x from here on.
            if dx >= bound {
                break;
            }
            let d = dx.max((pts[j].1 - yi).abs());
            if heap.len() < k {
                heap.push(Dist(d));
            } else if d < bound {
                heap.pop();
                heap.push(Dist(d));
            }
        }
        let eps = heap.peek().unwrap().0;
        let nx = count_within(&xs, xi, eps);
        let ny = count_within(&ys, yi, eps);
        total += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    let mi = digamma(k as f64) + digamma(n as f64) - total / n as f64;
    Ok(mi.max(0.0))
}
