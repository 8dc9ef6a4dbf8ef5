//! Levenberg–Marquardt on the landmark-SLAM normal equations.
//!
//! Landmarks are eliminated with a Schur complement (their blocks are
//! independent given the poses), and the reduced pose system is solved with
//! an envelope Cholesky.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::factors::{residual_and_jacobian, Variable};
use super::{elapsed, Estimate, Factor, FactorGraph, SolveResult};
use crate::error::{Error, Result};
use crate::geometry::{Point, Tangent};
use crate::linalg::{SkylineCholesky, SkylineMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iters: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub rel_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iters: 100,
            lambda0: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            rel_tol: 1e-6,
        }
    }
}

const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_MIN: f64 = 1e-16;

/// Normal equations `H·δ = −g` with landmarks kept in block form.
pub(crate) struct NormalEquations {
    pose_dof: usize,
    lm_dim: usize,
    pose_h: SkylineMatrix,
    pose_g: Vec<f64>,
    lm_h: Vec<DMatrix<f64>>,
    lm_g: Vec<DVector<f64>>,
    /// Per landmark: `(pose, H_pose,landmark)` blocks, one per observing pose.
    lm_links: Vec<Vec<(usize, DMatrix<f64>)>>,
}

/// Envelope of the reduced pose system: coupling through odometry, priors and
/// shared landmarks.
fn pose_envelope(graph: &FactorGraph) -> Vec<usize> {
    let n = graph.n_poses;
    let mut first = (0..n).collect::<Vec<usize>>();
    let mut lm_min = vec![usize::MAX; graph.n_landmarks];
    for f in &graph.factors {
        match f {
            Factor::Odometry(o) => {
                let (a, b) = (o.from.min(o.to), o.from.max(o.to));
                first[b] = first[b].min(a);
            }
            Factor::Landmark(l) => lm_min[l.landmark] = lm_min[l.landmark].min(l.pose),
            Factor::Prior(_) => {}
        }
    }
    for f in &graph.factors {
        if let Factor::Landmark(l) = f {
            first[l.pose] = first[l.pose].min(lm_min[l.landmark]);
        }
    }
    let p = graph.dim.dof();
    (0..n * p).map(|r| first[r / p] * p).collect()
}

impl NormalEquations {
    pub(crate) fn build(graph: &FactorGraph, est: &Estimate, envelope: &[usize]) -> Self {
        let p = graph.dim.dof();
        let d = graph.dim.d();
        let mut pose_h = SkylineMatrix::new(envelope.to_vec());
        let mut pose_g = vec![0.0; graph.n_poses * p];
        let mut lm_h = vec![DMatrix::zeros(d, d); graph.n_landmarks];
        let mut lm_g = vec![DVector::zeros(d); graph.n_landmarks];
        let mut lm_links: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); graph.n_landmarks];

        for f in &graph.factors {
            let lin = residual_and_jacobian(f, est);
            let r = &lin.residual;
            for (a, (va, ja)) in lin.jacobians.iter().enumerate() {
                let ga = ja.tr_mul(r);
                match *va {
                    Variable::Pose(i) => {
                        for (k, v) in ga.iter().enumerate() {
                            pose_g[i * p + k] += v;
                        }
                    }
                    Variable::Landmark(j) => lm_g[j] += ga,
                }
                for (vb, jb) in lin.jacobians.iter().take(a + 1) {
                    let block = ja.tr_mul(jb);
                    match (*va, *vb) {
                        (Variable::Pose(i), Variable::Pose(k)) => {
                            add_pose_block(&mut pose_h, i, k, p, &block, i == k);
                        }
                        (Variable::Landmark(j), Variable::Landmark(_)) => lm_h[j] += block,
                        (Variable::Landmark(j), Variable::Pose(i))
                        | (Variable::Pose(i), Variable::Landmark(j)) => {
                            // stored as H_pose,landmark (p × d)
                            let hpl = if matches!(*va, Variable::Pose(_)) {
                                block
                            } else {
                                block.transpose()
                            };
                            let links = &mut lm_links[j];
                            match links.iter_mut().find(|(q, _)| *q == i) {
                                Some((_, m)) => *m += hpl,
                                None => links.push((i, hpl)),
                            }
                        }
                    }
                }
            }
        }
        NormalEquations {
            pose_dof: p,
            lm_dim: d,
            pose_h,
            pose_g,
            lm_h,
            lm_g,
            lm_links,
        }
    }

    pub(crate) fn gradient_norm(&self) -> f64 {
        let a = self.pose_g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.lm_g.iter().fold(a, |m, g| m.max(g.amax()))
    }

    /// Solves the damped system `(H + λ·diag(H))·δ = −g`.
    pub(crate) fn solve(&self, lambda: f64) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
        let p = self.pose_dof;
        let mut s = self.pose_h.clone();
        for (i, h) in self.pose_h.diagonal().iter().enumerate() {
            s.add(i, i, lambda * h);
        }
        let mut rhs: Vec<f64> = self.pose_g.iter().map(|g| -g).collect();
        let mut lm_inv = Vec::with_capacity(self.lm_h.len());
        for (j, h) in self.lm_h.iter().enumerate() {
            let mut damped = h.clone();
            for k in 0..self.lm_dim {
                damped[(k, k)] += lambda * h[(k, k)];
            }
            let inv = damped
                .cholesky()
                .ok_or_else(|| Error::RankDeficient(format!("landmark {j}")))?
                .inverse();
            let links = &self.lm_links[j];
            // W_a · H_ll⁻¹ for every observing pose a
            let scaled: Vec<DMatrix<f64>> = links.iter().map(|(_, w)| w * &inv).collect();
            let g = &self.lm_g[j];
            for (x, (a, _)) in links.iter().enumerate() {
                let sg = &scaled[x] * g;
                for k in 0..p {
                    rhs[a * p + k] += sg[k];
                }
                for (y, (b, wb)) in links.iter().enumerate() {
                    if b > a || (b == a && y > x) {
                        continue;
                    }
                    let block = &scaled[x] * wb.transpose();
                    if a == b && x == y {
                        add_pose_block(&mut s, *a, *b, p, &(-block), true);
                    } else {
                        add_pose_block(&mut s, *a, *b, p, &(-block), false);
                    }
                }
            }
            lm_inv.push(inv);
        }
        let chol: SkylineCholesky = s
            .factorize()
            .map_err(|row| Error::RankDeficient(format!("pose {}", row / p)))?;
        chol.solve_in_place(&mut rhs);
        let dp = rhs;
        let dl = self
            .lm_h
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let mut r = -self.lm_g[j].clone();
                for (a, w) in &self.lm_links[j] {
                    let dpa = DVector::from_column_slice(&dp[a * p..(a + 1) * p]);
                    r -= w.tr_mul(&dpa);
                }
                &lm_inv[j] * r
            })
            .collect();
        Ok((dp, dl))
    }

    /// Factorization of the undamped reduced pose system, for marginals.
    pub(crate) fn marginals(&self) -> Result<Marginals> {
        let p = self.pose_dof;
        let mut s = self.pose_h.clone();
        let mut lm_inv = Vec::with_capacity(self.lm_h.len());
        for (j, h) in self.lm_h.iter().enumerate() {
            let inv = h
                .clone()
                .cholesky()
                .ok_or_else(|| Error::RankDeficient(format!("landmark {j}")))?
                .inverse();
            let links = &self.lm_links[j];
            for (x, (a, wa)) in links.iter().enumerate() {
                for (y, (b, wb)) in links.iter().enumerate() {
                    if b > a || (b == a && y > x) {
                        continue;
                    }
                    let block = wa * &inv * wb.transpose();
                    add_pose_block(&mut s, *a, *b, p, &(-block), a == b && x == y);
                }
            }
            lm_inv.push(inv);
        }
        let chol = s
            .factorize()
            .map_err(|row| Error::RankDeficient(format!("pose {}", row / p)))?;
        Ok(Marginals {
            pose_dof: p,
            chol,
            lm_inv,
            lm_links: self.lm_links.clone(),
        })
    }
}

/// Adds `block` (rows of pose `i`, columns of pose `k`) to the lower
/// triangle. Diagonal blocks (`diag`) are symmetric and only their lower half
/// is added.
fn add_pose_block(s: &mut SkylineMatrix, i: usize, k: usize, p: usize, block: &DMatrix<f64>, diag: bool) {
    if diag {
        for r in 0..p {
            for c in 0..=r {
                s.add(i * p + r, k * p + c, block[(r, c)]);
            }
        }
    } else if i > k {
        for r in 0..p {
            for c in 0..p {
                s.add(i * p + r, k * p + c, block[(r, c)]);
            }
        }
    } else if i < k {
        for r in 0..p {
            for c in 0..p {
                s.add(k * p + c, i * p + r, block[(r, c)]);
            }
        }
    } else {
        // Same pose from two different factors: symmetric sum of the block
        // and its transpose, lower half.
        for r in 0..p {
            for c in 0..=r {
                let v = if r == c {
                    2.0 * block[(r, c)]
                } else {
                    block[(r, c)] + block[(c, r)]
                };
                s.add(i * p + r, k * p + c, v);
            }
        }
    }
}

/// Covariance queries on a linearized graph.
pub(crate) struct Marginals {
    pose_dof: usize,
    chol: SkylineCholesky,
    lm_inv: Vec<DMatrix<f64>>,
    lm_links: Vec<Vec<(usize, DMatrix<f64>)>>,
}

impl Marginals {
    /// Joint covariance of pose `i` and landmark `j`, ordered `[pose; landmark]`.
    pub(crate) fn joint_pose_landmark(&self, i: usize, j: usize) -> DMatrix<f64> {
        let p = self.pose_dof;
        let hinv = &self.lm_inv[j];
        let d = hinv.nrows();
        let links = &self.lm_links[j];
        // Pose covariance columns for pose i and every observer of j.
        let mut poses: Vec<usize> = links.iter().map(|(a, _)| *a).collect();
        poses.push(i);
        poses.sort_unstable();
        poses.dedup();
        let cols: Vec<usize> = poses.iter().flat_map(|a| (a * p)..(a * p + p)).collect();
        let inv_cols = self.chol.inverse_columns(&cols);
        let sigma = |a: usize, b: usize| -> DMatrix<f64> {
            let ib = poses.binary_search(&b).expect("pose column computed");
            DMatrix::from_fn(p, p, |r, c| inv_cols[ib * p + c][a * p + r])
        };
        let sig_ii = sigma(i, i);
        // Σ_ij = −Σ_{i,a} W_a H_jj⁻¹ summed over observers a
        let mut sig_ij = DMatrix::zeros(p, d);
        let mut sig_jj = hinv.clone();
        for (a, wa) in links {
            sig_ij -= sigma(i, *a) * wa * hinv;
            for (b, wb) in links {
                sig_jj += hinv * wa.transpose() * sigma(*a, *b) * wb * hinv;
            }
        }
        let mut out = DMatrix::zeros(p + d, p + d);
        out.view_mut((0, 0), (p, p)).copy_from(&sig_ii);
        out.view_mut((0, p), (p, d)).copy_from(&sig_ij);
        out.view_mut((p, 0), (d, p)).copy_from(&sig_ij.transpose());
        out.view_mut((p, p), (d, d)).copy_from(&sig_jj);
        out
    }
}

pub(crate) struct Linearized<'g> {
    graph: &'g FactorGraph,
    envelope: Vec<usize>,
}

impl<'g> Linearized<'g> {
    pub(crate) fn new(graph: &'g FactorGraph) -> Self {
        Linearized {
            graph,
            envelope: pose_envelope(graph),
        }
    }

    pub(crate) fn at(&self, est: &Estimate) -> NormalEquations {
        NormalEquations::build(self.graph, est, &self.envelope)
    }
}

fn apply_step(est: &Estimate, dp: &[f64], dl: &[DVector<f64>], p: usize) -> Estimate {
    let poses = est
        .poses
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let t = Tangent::from_slice(x.dim(), &dp[i * p..(i + 1) * p]).expect("tangent size");
            x.retract(&t)
        })
        .collect();
    let landmarks = est
        .landmarks
        .iter()
        .zip(dl)
        .map(|(y, d)| {
            let mut y: Point = *y;
            for (k, v) in d.iter().enumerate() {
                y[k] += v;
            }
            y
        })
        .collect();
    Estimate { poses, landmarks }
}

fn check_estimate(graph: &FactorGraph, est: &Estimate) -> Result<()> {
    if est.poses.len() != graph.n_poses || est.landmarks.len() != graph.n_landmarks {
        return Err(Error::InvalidArgument(format!(
            "estimate has {} poses / {} landmarks, graph needs {} / {}",
            est.poses.len(),
            est.landmarks.len(),
            graph.n_poses,
            graph.n_landmarks
        )));
    }
    if let Some(bad) = est.poses.iter().find(|x| x.dim() != graph.dim) {
        return Err(Error::DimensionMismatch {
            expected: graph.dim.d(),
            found: bad.dim().d(),
        });
    }
    Ok(())
}

/// Minimizes the sum of squared whitened residuals of `graph` from `initial`.
///
/// The reported objective is the final cost; `history` lists the cost before
/// the first step and after every accepted step, so it is non-increasing.
pub fn optimize_lm(graph: &FactorGraph, initial: &Estimate, config: &LmConfig) -> Result<SolveResult> {
    let started = Instant::now();
    check_estimate(graph, initial)?;
    let p = graph.dim.dof();
    let lin = Linearized::new(graph);
    let mut est = initial.clone();
    let mut cost = graph.cost(&est);
    let mut history = vec![cost];
    let mut lambda = config.lambda0;
    let mut iterations = 0;

    if cost > 0.0 && cost.is_finite() {
        let mut system = lin.at(&est);
        while iterations < config.max_iters {
            if system.gradient_norm() <= 1e-14 * (1.0 + cost) {
                break;
            }
            iterations += 1;
            let (dp, dl) = system.solve(lambda)?;
            let candidate = apply_step(&est, &dp, &dl, p);
            let new_cost = graph.cost(&candidate);
            if new_cost.is_finite() && new_cost < cost {
                let decrease = (cost - new_cost) / cost;
                est = candidate;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / config.lambda_down).max(LAMBDA_MIN);
                if decrease < config.rel_tol || cost == 0.0 {
                    break;
                }
                system = lin.at(&est);
            } else {
                lambda *= config.lambda_up;
                if lambda > LAMBDA_MAX {
                    break;
                }
            }
        }
    }

    let associations = graph
        .factors
        .iter()
        .filter_map(|f| match f {
            Factor::Landmark(l) => Some(l.landmark),
            _ => None,
        })
        .collect();
    Ok(SolveResult {
        dim: graph.dim,
        trajectory: est.poses,
        landmarks: est.landmarks,
        associations,
        objective: cost,
        iterations,
        f_slam_evaluations: 0,
        wall_time_sec: elapsed(started),
        history,
    })
}

/// Joint pose/landmark covariance blocks at `est`.
pub(crate) fn marginals(graph: &FactorGraph, est: &Estimate) -> Result<Marginals> {
    Linearized::new(graph).at(est).marginals()
}
