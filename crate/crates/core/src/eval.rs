//! Accuracy metrics: absolute trajectory error, landmark-count error and the
//! penalized objective curve over `K`.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::SlamProblem;
use crate::geometry::{Dim, Pose};
use crate::kslam::{inner_solve, probe_rng, KslamConfig};

/// Rigid transform `(R, t)` minimizing `Σ‖R·a_i + t − b_i‖²` (no scale).
/// In 2D the rotation is about `z`.
pub fn rigid_alignment(dim: Dim, a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ca) * (q - cb).transpose();
    }
    let r = match dim {
        Dim::Two => {
            let h2 = Matrix2::new(h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]);
            let theta = (h2[(0, 1)] - h2[(1, 0)]).atan2(h2[(0, 0)] + h2[(1, 1)]);
            let (s, c) = theta.sin_cos();
            Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
        }
        Dim::Three => {
            let svd = h.svd(true, true);
            let u = svd.u.expect("svd u");
            let v = svd.v_t.expect("svd v_t").transpose();
            let mut fix = Matrix3::identity();
            if (v * u.transpose()).determinant() < 0.0 {
                fix[(2, 2)] = -1.0;
            }
            v * fix * u.transpose()
        }
    };
    (r, cb - r * ca)
}

/// Root-mean-square translation error between `estimate` and `reference`,
/// optionally after rigidly aligning the estimate onto the reference.
pub fn ate(estimate: &[Pose], reference: &[Pose], align: bool) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            found: estimate.len(),
        });
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let a: Vec<Vector3<f64>> = estimate.iter().map(|p| *p.translation()).collect();
    let b: Vec<Vector3<f64>> = reference.iter().map(|p| *p.translation()).collect();
    let (r, t) = if align {
        rigid_alignment(reference[0].dim(), &a, &b)
    } else {
        (Matrix3::identity(), Vector3::zeros())
    };
    let sse: f64 = a.iter().zip(&b).map(|(p, q)| (r * p + t - q).norm_squared()).sum();
    Ok((sse / a.len() as f64).sqrt())
}

pub fn landmark_count_delta(k_est: usize, k_true: usize) -> i64 {
    k_est as i64 - k_true as i64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub ate_rmse: f64,
    pub k_est: usize,
    pub k_true: Option<usize>,
    pub k_delta: Option<i64>,
    pub runtime_sec: f64,
    pub seed: u64,
}

impl EvalReport {
    pub fn new(method: &str, ate_rmse: f64, k_est: usize, k_true: Option<usize>, runtime_sec: f64, seed: u64) -> Self {
        EvalReport {
            method: method.to_string(),
            ate_rmse,
            k_est,
            k_true,
            k_delta: k_true.map(|k| landmark_count_delta(k_est, k)),
            runtime_sec,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub f_slam: f64,
    pub penalized: f64,
}

/// Best-of-`restarts` inner solves for every `K` in `k_list`, with the raw
/// and `β`-penalized objective.
pub fn objective_curve(
    problem: &SlamProblem,
    x_init: &[Pose],
    k_list: &[usize],
    restarts: usize,
    config: &KslamConfig,
) -> Result<Vec<CurvePoint>> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    k_list
        .par_iter()
        .map(|&k| {
            let mut best = f64::INFINITY;
            for restart in 0..restarts as u64 {
                let mut rng = probe_rng(config.seed, k, restart);
                let r = inner_solve(problem, x_init, k, config, &mut rng)?;
                best = best.min(r.objective);
            }
            Ok(CurvePoint {
                k,
                f_slam: best,
                penalized: best + config.beta * k as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::DatasetConfig;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn wiggly(dim: Dim, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let s = i as f64;
                match dim {
                    Dim::Two => Pose::planar(0.1 * s, s, (0.7 * s).sin()),
                    Dim::Three => Pose::spatial(
                        &UnitQuaternion::from_euler_angles(0.1 * s, 0.0, 0.2 * s),
                        Vector3::new(s, (0.7 * s).sin(), (0.3 * s).cos()),
                    ),
                }
            })
            .collect()
    }

    #[test]
    fn identical_is_zero() {
        let x = wiggly(Dim::Two, 10);
        assert_eq!(ate(&x, &x, true).unwrap(), 0.0);
        assert_eq!(ate(&x, &x, false).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_without_alignment() {
        let x = wiggly(Dim::Two, 10);
        let shifted: Vec<Pose> = x.iter().map(|p| &Pose::planar(0.0, 1.0, 0.0) * p).collect();
        assert!((ate(&shifted, &x, false).unwrap() - 1.0).abs() < 1e-12);
        assert!(ate(&shifted, &x, true).unwrap() < 1e-9);
    }

    #[test]
    fn length_mismatch() {
        let x = wiggly(Dim::Two, 3);
        assert!(ate(&x[..2], &x, true).is_err());
    }

    #[test]
    fn count_delta() {
        assert_eq!(landmark_count_delta(100, 100), 0);
        assert_eq!(landmark_count_delta(120, 100), 20);
        assert_eq!(landmark_count_delta(80, 100), -20);
    }

    proptest! {
        #[test]
        fn alignment_absorbs_rigid_motion(th in -3.0f64..3.0, tx in -5.0f64..5.0, ty in -5.0f64..5.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let x2 = wiggly(Dim::Two, 12);
            let g2 = Pose::planar(th, tx, ty);
            let moved: Vec<Pose> = x2.iter().map(|p| &g2 * p).collect();
            prop_assert!(ate(&moved, &x2, true).unwrap() < 1e-9);

            let x3 = wiggly(Dim::Three, 12);
            let g3 = Pose::spatial(&UnitQuaternion::from_euler_angles(a, b, th), Vector3::new(tx, ty, a));
            let moved3: Vec<Pose> = x3.iter().map(|p| &g3 * p).collect();
            prop_assert!(ate(&moved3, &x3, true).unwrap() < 1e-9);
        }

        #[test]
        fn invariant_to_common_transform(th in -3.0f64..3.0, tx in -5.0f64..5.0, noise in 0.0f64..0.5) {
            let reference = wiggly(Dim::Two, 12);
            let est: Vec<Pose> = reference
                .iter()
                .enumerate()
                .map(|(i, p)| &Pose::planar(0.0, noise * (i as f64).sin(), noise * (i as f64 * 1.3).cos()) * p)
                .collect();
            let g = Pose::planar(th, tx, -tx);
            let e2: Vec<Pose> = est.iter().map(|p| &g * p).collect();
            let r2: Vec<Pose> = reference.iter().map(|p| &g * p).collect();
            for align in [true, false] {
                let base = ate(&est, &reference, align).unwrap();
                prop_assert!((ate(&e2, &r2, align).unwrap() - base).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn curve_endpoints() {
        let c = DatasetConfig {
            n_poses: 12,
            n_landmarks: 3,
            obs_per_landmark: 4,
            grid_shape: Some(vec![4, 3]),
            seed: 3,
            ..DatasetConfig::grid2d()
        };
        let ds = c.generate().unwrap();
        let x = ds.problem.odometry_trajectory();
        let config = KslamConfig::default();
        let curve = objective_curve(&ds.problem, &x, &[1, 3, 12], 2, &config).unwrap();
        let last = curve.last().unwrap();
        assert!(last.f_slam < 1e-8);
        assert!((last.penalized - config.beta * 12.0).abs() < 1e-6);
        assert!(curve[0].f_slam >= curve[1].f_slam);
    }
}
