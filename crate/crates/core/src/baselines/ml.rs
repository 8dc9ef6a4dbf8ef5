//! Incremental maximum-likelihood data association with χ² gating.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::hungarian;
use crate::error::{Error, Result};
use crate::factor_graph::{
    build_slam_graph, elapsed, f_slam, marginals, optimize_lm, residual_and_jacobian, Estimate,
    Factor, LandmarkFactor, LmConfig, SlamProblem, SolveResult,
};
use crate::geometry::{Point, Pose};
use crate::kslam::chi2_quantile;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MlConfig {
    /// Gate probability: a pair is admissible when its Mahalanobis distance
    /// is below the χ²(d) quantile at this level.
    pub chi2_tail: f64,
    pub lm: LmConfig,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            chi2_tail: 0.8,
            lm: LmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationHypothesis {
    pub measurement: usize,
    pub landmark: usize,
    /// Squared Mahalanobis distance of the innovation.
    pub mahalanobis: f64,
    /// `ln det S + ε`.
    pub nll: f64,
}

/// Admissible landmarks for measurement `k` taken at `pose`.
///
/// `covariances[j]` is the joint covariance of the observing pose and
/// landmark `j`, ordered `[pose tangent; landmark]`. The innovation
/// covariance is `S = H·P·Hᵀ + σ²I`.
pub fn mahalanobis_gate(
    k: usize,
    z: &Point,
    pose: &Pose,
    landmarks: &[Point],
    covariances: &[DMatrix<f64>],
    sigma: f64,
    chi2_tail: f64,
) -> Result<Vec<AssociationHypothesis>> {
    if covariances.len() != landmarks.len() {
        return Err(Error::DimensionMismatch {
            expected: landmarks.len(),
            found: covariances.len(),
        });
    }
    let dim = pose.dim();
    let (d, p) = (dim.d(), dim.dof());
    let threshold = chi2_quantile(chi2_tail, d)?;
    let est = Estimate {
        poses: vec![*pose],
        landmarks: landmarks.to_vec(),
    };
    let mut out = Vec::new();
    for (j, cov) in covariances.iter().enumerate() {
        let lin = residual_and_jacobian(
            &Factor::Landmark(LandmarkFactor {
                pose: 0,
                landmark: j,
                z: *z,
                sigma: 1.0,
            }),
            &est,
        );
        let mut h = DMatrix::zeros(d, p + d);
        h.view_mut((0, 0), (d, p)).copy_from(&lin.jacobians[0].1);
        h.view_mut((0, p), (d, d)).copy_from(&lin.jacobians[1].1);
        let s = &h * cov * h.transpose() + DMatrix::identity(d, d) * sigma * sigma;
        let Some(chol) = s.clone().cholesky() else {
            log::warn!("innovation covariance of measurement {k} / landmark {j} is not positive definite; skipped");
            continue;
        };
        let eps = lin.residual.dot(&chol.solve(&lin.residual));
        if eps < threshold {
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            out.push(AssociationHypothesis {
                measurement: k,
                landmark: j,
                mahalanobis: eps,
                nll: log_det + eps,
            });
        }
    }
    Ok(out)
}

/// Sequential maximum-likelihood SLAM: odometry prediction, gating against
/// the current marginals, one-to-one assignment per time step, landmark
/// spawning for unmatched measurements, then batch LM.
pub fn ml_solve(problem: &SlamProblem, config: &MlConfig) -> Result<SolveResult> {
    let started = Instant::now();
    let dim = problem.dim;
    let n = problem.n_poses;
    let sigma = problem.effective_sigma();
    let p = dim.dof();
    let mut by_pose: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, m) in problem.measurements.iter().enumerate() {
        if m.pose >= n {
            return Err(Error::IndexOutOfRange {
                what: "pose",
                index: m.pose,
                limit: n,
            });
        }
        by_pose[m.pose].push(k);
    }
    let mut chain = vec![None; n.saturating_sub(1)];
    for o in problem.odometry.iter().filter(|o| o.to == o.from + 1 && o.to < n) {
        chain[o.from].get_or_insert(o.relative);
    }

    let mut poses: Vec<Pose> = Vec::with_capacity(n);
    let mut landmarks: Vec<Point> = Vec::new();
    let mut processed: Vec<usize> = Vec::new();
    let mut assoc = vec![usize::MAX; problem.m()];
    let mut history = Vec::new();
    let mut lm_runs = 0;

    let sub_problem = |t: usize, processed: &[usize]| SlamProblem {
        dim,
        n_poses: t + 1,
        odometry: problem
            .odometry
            .iter()
            .filter(|o| o.from <= t && o.to <= t)
            .cloned()
            .collect(),
        measurements: processed.iter().map(|&k| problem.measurements[k]).collect(),
        sigma: problem.sigma,
    };

    for t in 0..n {
        let predicted = match t {
            0 => Pose::identity(dim),
            _ => match &chain[t - 1] {
                Some(rel) => &poses[t - 1] * rel,
                None => poses[t - 1],
            },
        };
        poses.push(predicted);
        let new = &by_pose[t];
        if new.is_empty() {
            continue;
        }

        let mut assignment = vec![None; new.len()];
        if !landmarks.is_empty() {
            let current = sub_problem(t, &processed);
            let graph_assoc: Vec<usize> = processed.iter().map(|&k| assoc[k]).collect();
            let graph = build_slam_graph(&current, &graph_assoc)?;
            let est = Estimate {
                poses: poses.clone(),
                landmarks: landmarks.clone(),
            };
            let covariances: Vec<DMatrix<f64>> = match marginals(&graph, &est) {
                Ok(m) => (0..landmarks.len()).map(|j| m.joint_pose_landmark(t, j)).collect(),
                Err(e) => {
                    log::warn!("ml: marginals unavailable at step {t}: {e}");
                    vec![DMatrix::zeros(p + dim.d(), p + dim.d()); landmarks.len()]
                }
            };
            let mut cost = DMatrix::from_element(new.len(), landmarks.len(), f64::INFINITY);
            for (row, &k) in new.iter().enumerate() {
                let z = problem.measurements[k].z;
                for h in mahalanobis_gate(k, &z, &poses[t], &landmarks, &covariances, sigma, config.chi2_tail)? {
                    cost[(row, h.landmark)] = h.nll;
                }
            }
            assignment = hungarian(&cost);
        }
        for (row, &k) in new.iter().enumerate() {
            assoc[k] = match assignment[row] {
                Some(j) => j,
                None => {
                    landmarks.push(poses[t].project_to_world(&problem.measurements[k].z));
                    landmarks.len() - 1
                }
            };
            processed.push(k);
        }

        let current = sub_problem(t, &processed);
        let graph_assoc: Vec<usize> = processed.iter().map(|&k| assoc[k]).collect();
        let graph = build_slam_graph(&current, &graph_assoc)?;
        let est = Estimate {
            poses: poses.clone(),
            landmarks: landmarks.clone(),
        };
        lm_runs += 1;
        match optimize_lm(&graph, &est, &config.lm) {
            Ok(r) => {
                poses = r.trajectory;
                landmarks = r.landmarks;
                history.push(r.objective);
            }
            Err(e) => log::warn!("ml: LM failed at step {t}, keeping the previous estimate: {e}"),
        }
    }

    Ok(SolveResult {
        dim,
        objective: f_slam(problem, &poses, &landmarks),
        trajectory: poses,
        landmarks,
        associations: assoc,
        iterations: lm_runs,
        f_slam_evaluations: 0,
        wall_time_sec: elapsed(started),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::odom_trajectory;
    use crate::datasets::DatasetConfig;
    use crate::factor_graph::{Measurement, OdometryFactor};
    use crate::geometry::Dim;
    use nalgebra::Vector3;

    #[test]
    fn landmark_on_prediction_is_admissible() {
        let pose = Pose::planar(0.4, 1.0, 2.0);
        let y = Vector3::new(3.0, 1.0, 0.0);
        let z = pose.predict_measurement(&y);
        let cov = vec![DMatrix::identity(5, 5) * 0.01];
        let h = mahalanobis_gate(0, &z, &pose, &[y], &cov, 0.1, 0.8).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h[0].mahalanobis.abs() < 1e-20);
    }

    #[test]
    fn identity_innovation_covariance_is_euclidean() {
        let pose = Pose::planar(0.0, 0.0, 0.0);
        let ys = [Vector3::new(1.0, 1.0, 0.0), Vector3::new(1.5, 2.0, 0.0), Vector3::new(5.0, 5.0, 0.0)];
        let z = Vector3::new(1.0, 1.0, 0.0);
        let cov = vec![DMatrix::zeros(5, 5); 3];
        let h = mahalanobis_gate(7, &z, &pose, &ys, &cov, 1.0, 0.8).unwrap();
        // threshold −2 ln 0.2 = 3.2189: the far landmark is gated out
        assert_eq!(h.len(), 2);
        assert_eq!(h[1].landmark, 1);
        assert!((h[1].mahalanobis - 1.25).abs() < 1e-12);
        assert!((h[1].nll - 1.25).abs() < 1e-12);
        assert_eq!(h[0].measurement, 7);
    }

    #[test]
    fn indefinite_innovation_is_skipped() {
        let pose = Pose::planar(0.0, 0.0, 0.0);
        let y = Vector3::new(1.0, 0.0, 0.0);
        let cov = vec![DMatrix::identity(5, 5) * -10.0];
        assert!(mahalanobis_gate(0, &y, &pose, &[y], &cov, 0.1, 0.8).unwrap().is_empty());
    }

    #[test]
    fn no_measurements_is_odometry() {
        let odo: Vec<OdometryFactor> = (0..5)
            .map(|i| OdometryFactor::with_stds(i, i + 1, Pose::planar(0.1, 1.0, 0.0), 0.01, 0.1))
            .collect();
        let p = SlamProblem {
            dim: Dim::Two,
            n_poses: 6,
            odometry: odo.clone(),
            measurements: vec![],
            sigma: 0.1,
        };
        let r = ml_solve(&p, &MlConfig::default()).unwrap();
        assert_eq!(r.k(), 0);
        for (a, b) in r.trajectory.iter().zip(odom_trajectory(Dim::Two, &odo)) {
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn repeated_observation_associates() {
        let odo = vec![OdometryFactor::with_stds(0, 1, Pose::planar(0.0, 1.0, 0.0), 0.01, 0.01)];
        let y = Vector3::new(3.0, 1.0, 0.0);
        let x1 = Pose::planar(0.0, 1.0, 0.0);
        let p = SlamProblem {
            dim: Dim::Two,
            n_poses: 2,
            odometry: odo,
            measurements: vec![
                Measurement { pose: 0, z: y },
                Measurement { pose: 1, z: x1.predict_measurement(&y) + Vector3::new(0.01, 0.0, 0.0) },
            ],
            sigma: 0.05,
        };
        let r = ml_solve(&p, &MlConfig::default()).unwrap();
        assert_eq!(r.k(), 1);
        assert_eq!(r.associations, vec![0, 0]);
    }

    #[test]
    fn noiseless_grid_recovers_associations() {
        let c = DatasetConfig {
            n_poses: 30,
            n_landmarks: 6,
            obs_per_landmark: 5,
            grid_shape: Some(vec![6, 5]),
            odom_rot_std: 0.0,
            odom_trans_std: 0.0,
            lm_std: 0.0,
            seed: 12,
            ..DatasetConfig::grid2d()
        };
        let ds = c.generate().unwrap();
        let gt = ds.ground_truth.unwrap();
        let r = ml_solve(&ds.problem, &MlConfig::default()).unwrap();
        assert_eq!(r.k(), gt.k());
        // same partition up to relabeling
        let mut map = vec![usize::MAX; gt.k()];
        for (&a, &b) in r.associations.iter().zip(&gt.associations) {
            if map[b] == usize::MAX {
                map[b] = a;
            }
            assert_eq!(map[b], a);
        }
    }

    #[test]
    fn mutual_exclusion_within_a_step() {
        // two measurements from one pose of the same landmark: only one can
        // match it, the other spawns
        let odo = vec![OdometryFactor::with_stds(0, 1, Pose::planar(0.0, 1.0, 0.0), 0.01, 0.01)];
        let y = Vector3::new(3.0, 1.0, 0.0);
        let x1 = Pose::planar(0.0, 1.0, 0.0);
        let z1 = x1.predict_measurement(&y);
        let p = SlamProblem {
            dim: Dim::Two,
            n_poses: 2,
            odometry: odo,
            measurements: vec![
                Measurement { pose: 0, z: y },
                Measurement { pose: 1, z: z1 },
                Measurement { pose: 1, z: z1 + Vector3::new(0.001, 0.0, 0.0) },
            ],
            sigma: 0.05,
        };
        let r = ml_solve(&p, &MlConfig::default()).unwrap();
        assert_eq!(r.k(), 2);
        let hits = r.associations[1..].iter().filter(|&&j| j == 0).count();
        assert_eq!(hits, 1);
    }
}
