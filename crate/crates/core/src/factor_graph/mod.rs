//! Landmark-SLAM factor graphs and the SLAM objective.

mod factors;
mod optimizer;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Dim, Point, Pose};

pub use factors::{residual, residual_and_jacobian, Linearization, Variable};
pub use optimizer::{optimize_lm, LmConfig};
pub(crate) use optimizer::marginals;

/// Diagonal of the square-root information of the gauge prior on pose 0.
pub const PRIOR_SQRT_INFO: f64 = 1e4;

/// A landmark measurement `z̄` taken from pose `pose`, expressed in that
/// pose's frame. The observed landmark is unknown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub pose: usize,
    #[serde(with = "crate::datasets::point")]
    pub z: Point,
}

/// Relative-pose constraint between two poses.
#[derive(Clone, Debug, PartialEq)]
pub struct OdometryFactor {
    pub from: usize,
    pub to: usize,
    pub relative: Pose,
    /// Upper-triangular square-root information, rotation rows first.
    pub sqrt_info: DMatrix<f64>,
}

impl OdometryFactor {
    /// Factor with independent rotation/translation noise.
    pub fn with_stds(from: usize, to: usize, relative: Pose, rot_std: f64, trans_std: f64) -> Self {
        let sqrt_info = diagonal_sqrt_info(relative.dim(), rot_std, trans_std);
        OdometryFactor {
            from,
            to,
            relative,
            sqrt_info,
        }
    }
}

/// Smallest standard deviation used when whitening; zero-noise
/// configurations are weighted as if they had this much noise.
pub const MIN_STD: f64 = 1e-4;

/// Diagonal square-root information for the tangent ordering
/// `[rotation; translation]`.
pub fn diagonal_sqrt_info(dim: Dim, rot_std: f64, trans_std: f64) -> DMatrix<f64> {
    let p = dim.dof();
    let r = dim.rot_dof();
    DMatrix::from_fn(p, p, |i, j| {
        if i != j {
            0.0
        } else if i < r {
            1.0 / rot_std.max(MIN_STD)
        } else {
            1.0 / trans_std.max(MIN_STD)
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkFactor {
    pub pose: usize,
    pub landmark: usize,
    pub z: Point,
    pub sigma: f64,
}

/// Gauge-fixing prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorFactor {
    pub pose: usize,
    pub target: Pose,
    pub sqrt_info: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Prior(PriorFactor),
    Odometry(OdometryFactor),
    Landmark(LandmarkFactor),
}

#[derive(Clone, Debug)]
pub struct FactorGraph {
    pub dim: Dim,
    pub n_poses: usize,
    pub n_landmarks: usize,
    pub factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn count(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for f in &self.factors {
            match f {
                Factor::Prior(_) => c.0 += 1,
                Factor::Odometry(_) => c.1 += 1,
                Factor::Landmark(_) => c.2 += 1,
            }
        }
        c
    }

    /// Sum of squared whitened residuals.
    pub fn cost(&self, estimate: &Estimate) -> f64 {
        self.factors
            .iter()
            .map(|f| factors::residual(f, estimate).norm_squared())
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_landmarks];
        let mut priors = 0;
        for f in &self.factors {
            match f {
                Factor::Prior(p) => {
                    priors += 1;
                    check_index("pose", p.pose, self.n_poses)?;
                }
                Factor::Odometry(o) => {
                    check_index("pose", o.from, self.n_poses)?;
                    check_index("pose", o.to, self.n_poses)?;
                }
                Factor::Landmark(l) => {
                    check_index("pose", l.pose, self.n_poses)?;
                    check_index("landmark", l.landmark, self.n_landmarks)?;
                    if !(l.sigma > 0.0) {
                        return Err(Error::InvalidArgument(format!(
                            "landmark sigma must be positive, got {}",
                            l.sigma
                        )));
                    }
                    seen[l.landmark] = true;
                }
            }
        }
        if priors != 1 {
            return Err(Error::InvalidArgument(format!(
                "graph must contain exactly one prior, found {priors}"
            )));
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::UnobservedLandmark(j));
        }
        Ok(())
    }
}

fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
    if index >= limit {
        Err(Error::IndexOutOfRange { what, index, limit })
    } else {
        Ok(())
    }
}

/// Values of all graph variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub poses: Vec<Pose>,
    pub landmarks: Vec<Point>,
}

/// Odometry, anonymous landmark measurements and noise level: the inputs
/// shared by every solver.
#[derive(Clone, Debug)]
pub struct SlamProblem {
    pub dim: Dim,
    pub n_poses: usize,
    pub odometry: Vec<OdometryFactor>,
    pub measurements: Vec<Measurement>,
    /// Isotropic landmark measurement standard deviation (meters).
    pub sigma: f64,
}

impl SlamProblem {
    pub fn m(&self) -> usize {
        self.measurements.len()
    }

    /// Whitening scale actually applied to landmark residuals.
    pub fn effective_sigma(&self) -> f64 {
        self.sigma.max(MIN_STD)
    }

    /// Poses obtained by chaining odometry from the identity.
    pub fn odometry_trajectory(&self) -> Vec<Pose> {
        let mut poses = vec![Pose::identity(self.dim)];
        let mut chain: Vec<&OdometryFactor> =
            self.odometry.iter().filter(|o| o.to == o.from + 1).collect();
        chain.sort_by_key(|o| o.from);
        for o in chain {
            if o.from + 1 != poses.len() {
                break;
            }
            let next = &poses[o.from] * &o.relative;
            poses.push(next);
        }
        poses.resize(self.n_poses, *poses.last().expect("at least one pose"));
        poses
    }

    /// Projects every measurement to the world frame through `poses`.
    pub fn project_measurements(&self, poses: &[Pose]) -> Vec<Point> {
        self.measurements
            .iter()
            .map(|m| poses[m.pose].project_to_world(&m.z))
            .collect()
    }
}

/// Builds the standard landmark-SLAM graph for fixed associations
/// (0-based landmark index per measurement). `K` is the largest index + 1.
pub fn build_slam_graph(problem: &SlamProblem, associations: &[usize]) -> Result<FactorGraph> {
    if associations.len() != problem.measurements.len() {
        return Err(Error::InvalidArgument(format!(
            "{} associations for {} measurements",
            associations.len(),
            problem.measurements.len()
        )));
    }
    if problem.n_poses == 0 {
        return Err(Error::InvalidArgument("problem has no poses".into()));
    }
    let n_landmarks = associations.iter().max().map_or(0, |m| m + 1);
    let dim = problem.dim;
    let mut factors = Vec::with_capacity(1 + problem.odometry.len() + associations.len());
    factors.push(Factor::Prior(PriorFactor {
        pose: 0,
        target: Pose::identity(dim),
        sqrt_info: DMatrix::identity(dim.dof(), dim.dof()) * PRIOR_SQRT_INFO,
    }));
    factors.extend(problem.odometry.iter().cloned().map(Factor::Odometry));
    let sigma = problem.effective_sigma();
    for (m, &j) in problem.measurements.iter().zip(associations) {
        factors.push(Factor::Landmark(LandmarkFactor {
            pose: m.pose,
            landmark: j,
            z: m.z,
            sigma,
        }));
    }
    let graph = FactorGraph {
        dim,
        n_poses: problem.n_poses,
        n_landmarks,
        factors,
    };
    graph.validate()?;
    Ok(graph)
}

/// Result of any solver in the crate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub dim: Dim,
    #[serde(with = "crate::datasets::pose_list")]
    pub trajectory: Vec<Pose>,
    #[serde(with = "crate::datasets::point_list")]
    pub landmarks: Vec<Point>,
    /// 0-based landmark index per measurement.
    pub associations: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    /// Number of `f_slam*(K)` probes (inner solves) behind this result.
    pub f_slam_evaluations: usize,
    pub wall_time_sec: f64,
    /// Objective after each accepted step (LM) or each iteration (alternations).
    #[serde(default)]
    pub history: Vec<f64>,
}

impl SolveResult {
    /// Number of landmarks `K`.
    pub fn k(&self) -> usize {
        self.landmarks.len()
    }

    pub(crate) fn trajectory_only(dim: Dim, trajectory: Vec<Pose>, started: Instant) -> Self {
        SolveResult {
            dim,
            trajectory,
            landmarks: Vec::new(),
            associations: Vec::new(),
            objective: 0.0,
            iterations: 0,
            f_slam_evaluations: 0,
            wall_time_sec: started.elapsed().as_secs_f64(),
            history: Vec::new(),
        }
    }
}

/// Breakdown of the SLAM objective at a given estimate.
#[derive(Clone, Debug)]
pub struct FSlamTerms {
    pub odometry: f64,
    pub landmarks: f64,
    /// Minimizing landmark per measurement (lowest index on ties).
    pub associations: Vec<usize>,
}

impl FSlamTerms {
    pub fn total(&self) -> f64 {
        self.odometry + self.landmarks
    }
}

/// Whitened odometry cost plus, for every measurement, the squared whitened
/// residual to its best landmark in `landmarks`.
pub fn f_slam_terms(problem: &SlamProblem, poses: &[Pose], landmarks: &[Point]) -> FSlamTerms {
    let odometry = problem
        .odometry
        .iter()
        .map(|o| factors::odometry_error(o, &poses[o.from], &poses[o.to]).norm_squared())
        .sum();
    let inv_var = 1.0 / problem.effective_sigma().powi(2);
    let mut total = 0.0;
    let mut associations = Vec::with_capacity(problem.measurements.len());
    for m in &problem.measurements {
        let pose = &poses[m.pose];
        let (best_j, best) = landmarks
            .iter()
            .enumerate()
            .map(|(j, y)| (j, (pose.predict_measurement(y) - m.z).norm_squared()))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        total += best * inv_var;
        associations.push(best_j);
    }
    FSlamTerms {
        odometry,
        landmarks: if problem.measurements.is_empty() { 0.0 } else { total },
        associations,
    }
}

/// `f_slam(x, y, K)` with `K = landmarks.len()`.
pub fn f_slam(problem: &SlamProblem, poses: &[Pose], landmarks: &[Point]) -> f64 {
    f_slam_terms(problem, poses, landmarks).total()
}

pub(crate) fn elapsed(started: Instant) -> f64 {
    started.elapsed().as_secs_f64()
}
