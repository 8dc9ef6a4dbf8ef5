//! Euclidean k-means: k-means++ seeding and Lloyd iterations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Lloyd stops after this many iterations even if assignments still change.
pub const LLOYD_MAX_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub centers: Vec<Point>,
    /// 0-based center index per point.
    pub assignments: Vec<usize>,
    /// Sum of squared point-to-center distances.
    pub objective: f64,
    pub iterations: usize,
}

/// k-means++ seeding: the first center is uniform over the points, each
/// following one is drawn with probability proportional to its squared
/// distance to the nearest chosen center. Returns `k` distinct point indices'
/// coordinates.
pub fn kmeans_pp_init<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Result<Vec<Point>> {
    Ok(kmeans_pp_indices(points, k, rng)?
        .into_iter()
        .map(|i| points[i])
        .collect())
}

/// Indices of the points chosen by [`kmeans_pp_init`].
pub fn kmeans_pp_indices<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k-means++ needs 1 <= K <= #points, got K = {k} for {n} points"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().zip(&taken).filter(|(_, t)| !**t).map(|(d, _)| d).sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if taken[i] || *d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < *d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total weight has a candidate")
        } else {
            // Every remaining point coincides with a center: pick uniformly.
            let free: Vec<usize> = (0..n).filter(|i| !taken[*i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, p) in points.iter().enumerate() {
            let d = (p - points[next]).norm_squared();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Ok(chosen)
}

/// Nearest center, lowest index on ties.
fn nearest(p: &Point, centers: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Point], centers: &[Point], assignments: &mut [usize]) -> f64 {
    let mut objective = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        let (j, d) = nearest(p, centers);
        *a = j;
        objective += d;
    }
    objective
}

/// Sum of squared distances of each point to its assigned center.
pub fn kmeans_objective(points: &[Point], centers: &[Point], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &j)| (p - centers[j]).norm_squared())
        .sum()
}

/// Lloyd's algorithm from the given centers.
///
/// An empty cluster is reseeded at the point farthest from its current
/// center; if every point already sits on its center the cluster stays empty.
pub fn lloyd(points: &[Point], init_centers: &[Point]) -> ClusterResult {
    let k = init_centers.len();
    let mut centers = init_centers.to_vec();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut next = vec![0; points.len()];
    let mut iterations = 0;
    if k == 0 || points.is_empty() {
        return ClusterResult {
            centers,
            assignments: vec![0; points.len()],
            objective: 0.0,
            iterations,
        };
    }
    while iterations < LLOYD_MAX_ITERS {
        assign(points, &centers, &mut next);
        if next == assignments {
            break;
        }
        iterations += 1;
        assignments.copy_from_slice(&next);
        update_centers(points, &mut centers, &mut assignments);
    }
    let objective = assign(points, &centers, &mut assignments);
    ClusterResult {
        centers,
        assignments,
        objective,
        iterations,
    }
}

fn update_centers(points: &[Point], centers: &mut [Point], assignments: &mut [usize]) {
    let k = centers.len();
    let mut sums = vec![Point::zeros(); k];
    let mut counts = vec![0usize; k];
    for (p, &j) in points.iter().zip(assignments.iter()) {
        sums[j] += p;
        counts[j] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            centers[j] = sums[j] / counts[j] as f64;
        }
    }
    let mut reseeded = false;
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let farthest = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .map(|(i, p)| (i, (p - centers[assignments[i]]).norm_squared()))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((i, d)) = farthest {
            if d > 0.0 {
                let old = assignments[i];
                counts[old] -= 1;
                counts[j] = 1;
                assignments[i] = j;
                centers[j] = points[i];
                reseeded = true;
            }
        }
    }
    if reseeded {
        let mut sums = vec![Point::zeros(); k];
        for (p, &j) in points.iter().zip(assignments.iter()) {
            sums[j] += p;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
    }
}

/// k-means++ seeding followed by Lloyd.
pub fn kmeans<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Result<ClusterResult> {
    let init = kmeans_pp_init(points, k, rng)?;
    Ok(lloyd(points, &init))
}
