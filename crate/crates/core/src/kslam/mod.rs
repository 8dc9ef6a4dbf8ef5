//! K-SLAM: alternating clustering / landmark SLAM for a fixed landmark count
//! (inner solver) and a multi-resolution search over the count (outer solver).

mod chi2;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::compact;
use crate::clustering::kmeans;
use crate::error::{Error, Result};
use crate::factor_graph::{
    build_slam_graph, elapsed, f_slam_terms, optimize_lm, Estimate, LmConfig, SlamProblem,
    SolveResult,
};
use crate::geometry::{Point, Pose};

pub use chi2::{beta_heuristic, chi2_cdf, chi2_quantile, gamma_p, ln_gamma, BETA_TAIL};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KslamConfig {
    pub max_iterations: usize,
    /// Probes per level of the outer search.
    pub n_k: usize,
    /// Penalty per landmark, in whitened squared-residual units.
    pub beta: f64,
    pub seed: u64,
    pub lm: LmConfig,
}

impl Default for KslamConfig {
    fn default() -> Self {
        KslamConfig {
            max_iterations: 15,
            n_k: 11,
            beta: beta_heuristic(2, 10.0, BETA_TAIL).expect("valid defaults"),
            seed: 0,
            lm: LmConfig::default(),
        }
    }
}

impl KslamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_k < 3 {
            return Err(Error::InvalidArgument(format!("n_k must be >= 3, got {}", self.n_k)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Random stream for inner solve `restart` at landmark count `k`.
pub fn probe_rng(seed: u64, k: usize, restart: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart));
    rng.set_stream(k as u64);
    rng
}

/// Inner solver for a fixed `k`. Each iteration projects the measurements
/// through the current poses, clusters them with k-means++ and Lloyd, and
/// runs LM from the cluster centers. Returns the iterate with the lowest
/// `f_slam`; `history` holds `f_slam` per completed iteration.
pub fn inner_solve<R: Rng + ?Sized>(
    problem: &SlamProblem,
    x_init: &[Pose],
    k: usize,
    config: &KslamConfig,
    rng: &mut R,
) -> Result<SolveResult> {
    let started = Instant::now();
    let m = problem.m();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("K must lie in [1, {m}], got {k}")));
    }
    if x_init.len() != problem.n_poses {
        return Err(Error::DimensionMismatch {
            expected: problem.n_poses,
            found: x_init.len(),
        });
    }
    let mut x = x_init.to_vec();
    let mut best: Option<(f64, Vec<Pose>, Vec<Point>, Vec<usize>)> = None;
    let mut history = Vec::with_capacity(config.max_iterations);
    let mut last_error = None;
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let points = problem.project_measurements(&x);
        let clusters = kmeans(&points, k, rng)?;
        let (assoc, y0) = compact(&clusters.assignments, &clusters.centers);
        let graph = build_slam_graph(problem, &assoc)?;
        let solved = match optimize_lm(&graph, &Estimate { poses: x.clone(), landmarks: y0 }, &config.lm) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("inner solve K={k}: LM failed, iterate skipped: {e}");
                last_error = Some(e);
                continue;
            }
        };
        x = solved.trajectory;
        // Keep K columns: clusters that lost every point retain their center.
        let mut y = clusters.centers.clone();
        let mut slot = 0;
        let mut seen = vec![false; k];
        for &j in &clusters.assignments {
            seen[j] = true;
        }
        for (j, used) in seen.iter().enumerate() {
            if *used {
                y[j] = solved.landmarks[slot];
                slot += 1;
            }
        }
        let terms = f_slam_terms(problem, &x, &y);
        let f = terms.total();
        history.push(f);
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, x.clone(), y, terms.associations));
        }
        if f == 0.0 {
            break;
        }
    }
    let (objective, trajectory, landmarks, associations) = match best {
        Some(b) => b,
        None => return Err(last_error.expect("an iteration ran")),
    };
    Ok(SolveResult {
        dim: problem.dim,
        trajectory,
        landmarks,
        associations,
        objective,
        iterations,
        f_slam_evaluations: 1,
        wall_time_sec: elapsed(started),
        history,
    })
}

/// Sorted, deduplicated, near-evenly spaced integers in `[lo, hi]` with both
/// endpoints; every integer when the interval has at most `n` of them.
pub fn uniform_div(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    assert!(lo <= hi && n >= 2, "uniform_div needs lo <= hi and n >= 2");
    if hi - lo + 1 <= n {
        return (lo..=hi).collect();
    }
    let step = (hi - lo) as f64 / (n - 1) as f64;
    let mut out: Vec<usize> = (0..n).map(|i| (lo as f64 + i as f64 * step).round() as usize).collect();
    out.dedup();
    out
}

fn max_gap(grid: &[usize]) -> usize {
    grid.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
}

/// One probe of the outer search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub level: usize,
    pub k: usize,
    pub f_slam: f64,
    pub penalized: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome<T> {
    pub best_k: usize,
    /// `f_slam*(K) + β·K` at the chosen `K`.
    pub best_value: f64,
    pub best: T,
    /// Number of probes, repeats included.
    pub evaluations: usize,
    pub probes: Vec<Probe>,
}

/// Multi-resolution search for `argmin_K f(K) + β·K` over `K ∈ [1, m]`.
///
/// Each level probes a uniform grid in ascending order and keeps the best
/// value with `<=`, so ties go to the larger `K`. The next level spans the
/// neighbouring grid points of the current best. The search ends after a
/// level whose grid has resolution 1. Probes of one level run in parallel;
/// `probe` returns `f(K)` and a payload.
pub fn multi_resolution_search<T, F>(m: usize, n_k: usize, beta: f64, probe: F) -> Result<SearchOutcome<T>>
where
    T: Send,
    F: Fn(usize) -> Result<(f64, T)> + Sync,
{
    if m == 0 {
        return Err(Error::InvalidArgument("no measurements".into()));
    }
    if n_k < 3 {
        return Err(Error::InvalidArgument(format!("n_k must be >= 3, got {n_k}")));
    }
    let mut best: Option<(f64, usize, T)> = None;
    let mut probes = Vec::new();
    let mut evaluations = 0;
    let mut grid = uniform_div(1, m, n_k);
    let mut level = 0;
    loop {
        let results: Vec<(usize, Result<(f64, T)>)> =
            grid.par_iter().map(|&k| (k, probe(k))).collect();
        evaluations += grid.len();
        for (k, r) in results {
            let (f, payload) = match r {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("probe K={k} failed: {e}");
                    continue;
                }
            };
            let penalized = f + beta * k as f64;
            probes.push(Probe {
                level,
                k,
                f_slam: f,
                penalized,
            });
            if best.as_ref().is_none_or(|b| penalized <= b.0) {
                best = Some((penalized, k, payload));
            }
        }
        let gap = max_gap(&grid);
        if gap <= 1 {
            break;
        }
        let Some((_, k_star, _)) = best.as_ref() else {
            return Err(Error::InvalidArgument("every probe of the first level failed".into()));
        };
        let k_star = *k_star;
        let lo = grid.iter().rev().find(|&&k| k < k_star).copied().unwrap_or(k_star);
        let hi = grid.iter().find(|&&k| k > k_star).copied().unwrap_or(k_star);
        let mut n = n_k;
        let mut next = uniform_div(lo, hi, n);
        // Coarse grids (small n_k) may not shrink the bracket; add points
        // until the resolution improves.
        while max_gap(&next) >= gap && max_gap(&next) > 1 {
            n += 1;
            next = uniform_div(lo, hi, n);
        }
        grid = next;
        level += 1;
    }
    let (best_value, best_k, payload) = best.expect("search ended after a successful level");
    Ok(SearchOutcome {
        best_k,
        best_value,
        best: payload,
        evaluations,
        probes,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuterResult {
    pub result: SolveResult,
    /// `f_slam*(K) + β·K` at the chosen `K`.
    pub penalized_objective: f64,
    pub probes: Vec<Probe>,
}

/// Outer solver: picks `K` minimizing `f_slam*(K) + β·K`. Every probe starts
/// from `x_init`. `result.f_slam_evaluations` counts inner solves.
pub fn outer_solve(problem: &SlamProblem, x_init: &[Pose], config: &KslamConfig) -> Result<OuterResult> {
    let started = Instant::now();
    config.validate()?;
    let outcome = multi_resolution_search(problem.m(), config.n_k, config.beta, |k| {
        let mut rng = probe_rng(config.seed, k, 0);
        let r = inner_solve(problem, x_init, k, config, &mut rng)?;
        Ok((r.objective, r))
    })?;
    let mut result = outcome.best;
    result.f_slam_evaluations = outcome.evaluations;
    result.wall_time_sec = elapsed(started);
    log::info!(
        "outer search: K = {} after {} probes, f + beta*K = {:.3}",
        outcome.best_k,
        outcome.evaluations,
        outcome.best_value
    );
    Ok(OuterResult {
        result,
        penalized_objective: outcome.best_value,
        probes: outcome.probes,
    })
}
