//! Comparison methods: odometry only, the Oracle alternation that knows the
//! true landmark count, and incremental maximum-likelihood association.

mod hungarian;
mod ml;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::{
    build_slam_graph, elapsed, f_slam, f_slam_terms, optimize_lm, Estimate, LmConfig,
    OdometryFactor, SlamProblem, SolveResult,
};
use crate::geometry::{Dim, Point, Pose};

pub use hungarian::{assignment_cost, hungarian};
pub use ml::{mahalanobis_gate, ml_solve, AssociationHypothesis, MlConfig};

/// Composes chain odometry from the identity.
pub fn odom_trajectory(dim: Dim, odometry: &[OdometryFactor]) -> Vec<Pose> {
    let n = odometry.iter().map(|o| o.to.max(o.from) + 1).max().unwrap_or(1);
    SlamProblem {
        dim,
        n_poses: n,
        odometry: odometry.to_vec(),
        measurements: vec![],
        sigma: 0.0,
    }
    .odometry_trajectory()
}

/// Odometry-only estimate; no landmarks.
pub fn odom_solve(problem: &SlamProblem) -> SolveResult {
    let started = Instant::now();
    let mut r = SolveResult::trajectory_only(problem.dim, problem.odometry_trajectory(), started);
    r.objective = f_slam_terms(problem, &r.trajectory, &[]).odometry;
    r
}

/// Each landmark initialized by projecting its earliest measurement through
/// `poses`.
pub fn first_observation_init(
    problem: &SlamProblem,
    associations: &[usize],
    poses: &[Pose],
) -> Result<Vec<Point>> {
    if associations.len() != problem.m() {
        return Err(Error::DimensionMismatch {
            expected: problem.m(),
            found: associations.len(),
        });
    }
    let k = associations.iter().max().map_or(0, |j| j + 1);
    let mut first: Vec<Option<usize>> = vec![None; k];
    for (idx, (m, &j)) in problem.measurements.iter().zip(associations).enumerate() {
        match first[j] {
            Some(prev) if problem.measurements[prev].pose <= m.pose => {}
            _ => first[j] = Some(idx),
        }
    }
    first
        .into_iter()
        .enumerate()
        .map(|(j, idx)| {
            let idx = idx.ok_or(Error::UnobservedLandmark(j))?;
            let m = &problem.measurements[idx];
            Ok(poses[m.pose].project_to_world(&m.z))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub max_iters: usize,
    pub lm: LmConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_iters: 15,
            lm: LmConfig::default(),
        }
    }
}

/// Renumbers used landmark indices densely, keeping their order.
pub(crate) fn compact(associations: &[usize], landmarks: &[Point]) -> (Vec<usize>, Vec<Point>) {
    let mut map = vec![usize::MAX; landmarks.len()];
    let mut kept = Vec::new();
    for &j in associations {
        if map[j] == usize::MAX {
            map[j] = 0;
        }
    }
    for (j, slot) in map.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = kept.len();
            kept.push(landmarks[j]);
        }
    }
    (associations.iter().map(|&j| map[j]).collect(), kept)
}

/// Alternates nearest-landmark association and landmark SLAM until the
/// associations repeat. Landmarks that attract no measurement are dropped.
pub fn oracle_solve(
    problem: &SlamProblem,
    x_init: &[Pose],
    y_init: &[Point],
    config: &OracleConfig,
) -> Result<SolveResult> {
    let started = Instant::now();
    if y_init.is_empty() {
        return Err(Error::InvalidArgument("oracle needs at least one landmark".into()));
    }
    let mut poses = x_init.to_vec();
    let mut landmarks = y_init.to_vec();
    let mut previous: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut associations = Vec::new();
    while iterations < config.max_iters {
        let nearest = f_slam_terms(problem, &poses, &landmarks).associations;
        let (assoc, y0) = compact(&nearest, &landmarks);
        if previous.as_ref() == Some(&assoc) {
            break;
        }
        iterations += 1;
        let graph = build_slam_graph(problem, &assoc)?;
        match optimize_lm(&graph, &Estimate { poses: poses.clone(), landmarks: y0 }, &config.lm) {
            Ok(r) => {
                poses = r.trajectory;
                landmarks = r.landmarks;
            }
            Err(e) => {
                log::warn!("oracle: LM failed at iteration {iterations}: {e}");
                break;
            }
        }
        history.push(f_slam(problem, &poses, &landmarks));
        associations = assoc.clone();
        previous = Some(assoc);
    }
    if associations.is_empty() && problem.m() > 0 {
        associations = f_slam_terms(problem, &poses, &landmarks).associations;
    }
    Ok(SolveResult {
        dim: problem.dim,
        objective: f_slam(problem, &poses, &landmarks),
        trajectory: poses,
        landmarks,
        associations,
        iterations,
        f_slam_evaluations: 0,
        wall_time_sec: elapsed(started),
        history,
    })
}
