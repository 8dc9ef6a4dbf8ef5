//! Semi-real datasets: real odometry and trajectory from a pose graph,
//! synthetic landmarks.

use nalgebra::DMatrix;
use rand::Rng;

use super::{inject_landmarks, Dataset, DatasetConfig, GroundTruth, PoseGraph};
use crate::error::{Error, Result};
use crate::factor_graph::{
    optimize_lm, Estimate, Factor, FactorGraph, LmConfig, OdometryFactor, PriorFactor, SlamProblem,
    PRIOR_SQRT_INFO,
};
use crate::geometry::{Dim, Pose};

/// Maps an internal tangent `[rotation; translation]` to g2o's error vector.
/// For SE3, g2o uses the quaternion vector part, half the rotation vector
/// for small errors.
fn g2o_from_internal(dim: Dim) -> DMatrix<f64> {
    match dim {
        Dim::Two => DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
        Dim::Three => {
            let mut t = DMatrix::zeros(6, 6);
            for k in 0..3 {
                t[(k, 3 + k)] = 1.0;
                t[(3 + k, k)] = 0.5;
            }
            t
        }
    }
}

/// Upper-triangular `U` with `UᵀU = Ω`. A singular or indefinite `Ω` is
/// clipped to its positive eigen-part with a tiny floor.
pub(crate) fn sqrt_information(omega: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (omega + omega.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return c.l().transpose();
    }
    let eig = sym.symmetric_eigen();
    let floor = eig.eigenvalues.max().max(1.0) * 1e-12;
    let clipped = eig.eigenvalues.map(|e| e.max(floor));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let repaired = (&repaired + repaired.transpose()) * 0.5;
    repaired
        .cholesky()
        .expect("floored eigenvalues are positive")
        .l()
        .transpose()
}

/// Odometry factor for a g2o edge, with the information converted to the
/// internal tangent ordering.
pub(crate) fn edge_factor(dim: Dim, from: usize, to: usize, relative: Pose, information: &DMatrix<f64>) -> OdometryFactor {
    let t = g2o_from_internal(dim);
    let omega = t.transpose() * information * &t;
    OdometryFactor {
        from,
        to,
        relative,
        sqrt_info: sqrt_information(&omega),
    }
}

/// Optimizes the full pose graph, loop closures included, with vertex 0
/// anchored at the identity. The result serves as proxy ground truth.
pub fn optimize_pose_graph(graph: &PoseGraph, lm: &LmConfig) -> Result<Vec<Pose>> {
    let dim = graph
        .dim
        .ok_or_else(|| Error::InvalidArgument("pose graph is empty".into()))?;
    let anchor = graph.vertices[0].inverse();
    let initial: Vec<Pose> = graph.vertices.iter().map(|v| &anchor * v).collect();
    let mut factors = vec![Factor::Prior(PriorFactor {
        pose: 0,
        target: Pose::identity(dim),
        sqrt_info: DMatrix::identity(dim.dof(), dim.dof()) * PRIOR_SQRT_INFO,
    })];
    factors.extend(graph.edges.iter().map(|e| {
        Factor::Odometry(edge_factor(dim, e.from, e.to, e.relative, &e.information))
    }));
    let fg = FactorGraph {
        dim,
        n_poses: graph.vertices.len(),
        n_landmarks: 0,
        factors,
    };
    let result = optimize_lm(
        &fg,
        &Estimate {
            poses: initial,
            landmarks: vec![],
        },
        lm,
    )?;
    Ok(result.trajectory)
}

/// Semi-real dataset: the optimized pose graph is the ground-truth
/// trajectory, the chain edges are the odometry (kept as recorded), loop
/// closures are dropped, and landmarks are injected as for grid worlds.
pub fn make_semireal<R: Rng + ?Sized>(
    graph: &PoseGraph,
    config: &DatasetConfig,
    lm: &LmConfig,
    rng: &mut R,
) -> Result<Dataset> {
    let dim = graph
        .dim
        .ok_or_else(|| Error::InvalidArgument("pose graph is empty".into()))?;
    let n = graph.vertices.len();
    let mut chain: Vec<Option<OdometryFactor>> = vec![None; n.saturating_sub(1)];
    for e in graph.edges.iter().filter(|e| !e.is_loop_closure()) {
        let slot = &mut chain[e.from];
        if slot.is_none() {
            *slot = Some(edge_factor(dim, e.from, e.to, e.relative, &e.information));
        }
    }
    let odometry = chain
        .into_iter()
        .enumerate()
        .map(|(i, o)| o.ok_or(Error::BrokenChain(i, i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let trajectory = optimize_pose_graph(graph, lm)?;
    let config = DatasetConfig {
        dim,
        n_poses: n,
        grid_shape: None,
        ..config.clone()
    };
    if config.n_landmarks == 0 || config.obs_per_landmark == 0 {
        return Err(Error::InvalidArgument(
            "n_landmarks and obs_per_landmark must be positive".into(),
        ));
    }
    let (landmarks, measurements, associations) = inject_landmarks(&trajectory, &config, rng)?;
    Ok(Dataset {
        name: config.name.clone(),
        problem: SlamProblem {
            dim,
            n_poses: n,
            odometry,
            measurements,
            sigma: config.lm_std,
        },
        ground_truth: Some(GroundTruth {
            trajectory,
            landmarks,
            associations,
        }),
        config: Some(config),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{parse_g2o, PoseGraphEdge};
    use crate::factor_graph::residual;
    use crate::geometry::Tangent;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_graph(dim: Dim, n: usize, loop_closure: bool) -> PoseGraph {
        let step = match dim {
            Dim::Two => Pose::planar(0.3, 1.0, 0.2),
            Dim::Three => Pose::spatial(
                &UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
                Vector3::new(1.0, 0.2, -0.1),
            ),
        };
        let mut vertices = vec![Pose::identity(dim)];
        for i in 1..n {
            vertices.push(&vertices[i - 1] * &step);
        }
        let info = DMatrix::identity(dim.dof(), dim.dof()) * 100.0;
        let mut edges: Vec<PoseGraphEdge> = (0..n - 1)
            .map(|i| PoseGraphEdge {
                from: i,
                to: i + 1,
                relative: step,
                information: info.clone(),
            })
            .collect();
        if loop_closure {
            edges.push(PoseGraphEdge {
                from: 0,
                to: n - 1,
                relative: &vertices[0].inverse() * &vertices[n - 1],
                information: info,
            });
        }
        PoseGraph {
            dim: Some(dim),
            vertices,
            edges,
        }
    }

    fn config(lm_std: f64) -> DatasetConfig {
        DatasetConfig {
            n_landmarks: 4,
            obs_per_landmark: 3,
            lm_std,
            ..DatasetConfig::grid2d()
        }
    }

    #[test]
    fn information_reordering_matches_g2o_error() {
        // SE2: g2o error [x, y, θ] equals the permuted internal [θ, x, y].
        let t = g2o_from_internal(Dim::Two);
        let internal = nalgebra::DVector::from_vec(vec![0.1, 0.2, 0.3]);
        assert_eq!((&t * internal).as_slice(), &[0.2, 0.3, 0.1]);
        // SE3: small rotation error maps to half-angle quaternion part.
        let omega = Vector3::new(1e-4, -2e-4, 3e-4);
        let q = UnitQuaternion::from_scaled_axis(omega);
        let tt = g2o_from_internal(Dim::Three);
        let mapped = &tt * nalgebra::DVector::from_vec(vec![omega.x, omega.y, omega.z, 0.0, 0.0, 0.0]);
        assert!((mapped[3] - q.i).abs() < 1e-11);
        assert!((mapped[5] - q.k).abs() < 1e-11);
    }

    #[test]
    fn sqrt_information_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let u = sqrt_information(&a);
        assert!((u.transpose() * &u - &a).abs().max() < 1e-12);
        assert_eq!(u[(1, 0)], 0.0);
        let singular = DMatrix::from_diagonal_element(3, 3, 0.0);
        assert!(sqrt_information(&singular).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chain_only_graph_keeps_odometry() {
        for dim in [Dim::Two, Dim::Three] {
            let g = chain_graph(dim, 12, false);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let ds = make_semireal(&g, &config(0.0), &LmConfig::default(), &mut rng).unwrap();
            let gt = ds.ground_truth.as_ref().unwrap();
            let odo = ds.problem.odometry_trajectory();
            for ((a, b), v) in gt.trajectory.iter().zip(&odo).zip(&g.vertices) {
                assert!(a.max_abs_diff(b) < 1e-8);
                assert!(a.max_abs_diff(v) < 1e-8);
            }
            assert_eq!(ds.m(), 12);
            for (m, &j) in ds.problem.measurements.iter().zip(&gt.associations) {
                let z = gt.trajectory[m.pose].predict_measurement(&gt.landmarks[j]);
                assert!((z - m.z).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn loop_closures_are_dropped() {
        let g = chain_graph(Dim::Two, 8, true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = make_semireal(&g, &config(0.05), &LmConfig::default(), &mut rng).unwrap();
        assert_eq!(ds.problem.odometry.len(), 7);
        assert!(ds.problem.odometry.iter().all(|o| o.to == o.from + 1));
    }

    #[test]
    fn broken_chain_is_an_error() {
        let mut g = chain_graph(Dim::Two, 6, false);
        g.edges.remove(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            make_semireal(&g, &config(0.05), &LmConfig::default(), &mut rng),
            Err(Error::BrokenChain(2, 3))
        ));
    }

    #[test]
    fn se3_edge_cost_matches_g2o_convention() {
        // A g2o edge whose measurement differs by a small rotation: the
        // internal whitened cost approximates eᵀΩe with g2o's error vector.
        let text = "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 1 0 0 0 0 0 1\n\
EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 4 0 0 4 0 4\n";
        let g = parse_g2o(text).unwrap();
        let e = &g.edges[0];
        let f = edge_factor(Dim::Three, 0, 1, e.relative, &e.information);
        let omega = Vector3::new(0.0, 0.0, 1e-3);
        let x1 = Pose::identity(Dim::Three).retract(&Tangent::spatial(omega, Vector3::new(1.0, 0.0, 0.0)));
        let est = Estimate {
            poses: vec![Pose::identity(Dim::Three), x1],
            landmarks: vec![],
        };
        let cost = residual(&Factor::Odometry(f), &est).norm_squared();
        let qz = (omega.z / 2.0).sin();
        assert!((cost - 4.0 * qz * qz).abs() < 1e-10);
    }
}
