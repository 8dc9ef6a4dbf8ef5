//! Synthetic grid worlds, semi-real datasets built from g2o pose graphs, and
//! the ground-truth reference trajectory.

mod g2o;
mod io;
mod semireal;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::first_observation_init;
use crate::error::{Error, Result};
use crate::factor_graph::{
    build_slam_graph, optimize_lm, Estimate, LmConfig, Measurement, OdometryFactor, SlamProblem,
    SolveResult,
};
use crate::geometry::{Dim, Point, Pose, Tangent};

pub use g2o::{load_g2o, parse_g2o, save_g2o, write_g2o, PoseGraph, PoseGraphEdge};
pub use io::{point, point_list, pose_list, PoseRecord, FORMAT_VERSION};
pub use semireal::{make_semireal, optimize_pose_graph};

/// Generation parameters. Defaults are the 2D grid preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub dim: Dim,
    pub n_poses: usize,
    pub n_landmarks: usize,
    pub obs_per_landmark: usize,
    pub odom_trans_std: f64,
    pub odom_rot_std: f64,
    pub lm_std: f64,
    /// Cells per axis, fastest-varying first. Derived from `n_poses` when absent.
    pub grid_shape: Option<Vec<usize>>,
    pub spacing: f64,
    /// Landmark box margin per side, as a fraction of the trajectory extent.
    pub inflation: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::grid2d()
    }
}

impl DatasetConfig {
    pub fn grid2d() -> Self {
        DatasetConfig {
            name: "grid2d".into(),
            dim: Dim::Two,
            n_poses: 500,
            n_landmarks: 100,
            obs_per_landmark: 10,
            odom_trans_std: 0.05,
            odom_rot_std: 0.005,
            lm_std: 0.05,
            grid_shape: None,
            spacing: 1.0,
            inflation: 0.1,
            seed: 0,
        }
    }

    pub fn grid3d() -> Self {
        DatasetConfig {
            name: "grid3d".into(),
            dim: Dim::Three,
            n_poses: 216,
            n_landmarks: 43,
            grid_shape: None,
            ..DatasetConfig::grid2d()
        }
    }

    /// Landmark layout for the Intel pose graph (odometry comes from the file).
    pub fn intel() -> Self {
        DatasetConfig {
            name: "intel".into(),
            n_poses: 942,
            n_landmarks: 94,
            obs_per_landmark: 20,
            odom_trans_std: 0.045,
            odom_rot_std: 0.014,
            grid_shape: None,
            ..DatasetConfig::grid2d()
        }
    }

    /// Landmark layout for the parking-garage pose graph.
    pub fn garage() -> Self {
        DatasetConfig {
            name: "garage".into(),
            dim: Dim::Three,
            n_poses: 1661,
            n_landmarks: 166,
            obs_per_landmark: 20,
            odom_trans_std: 1.0,
            odom_rot_std: 0.0,
            grid_shape: None,
            ..DatasetConfig::grid2d()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "grid2d" => Ok(DatasetConfig::grid2d()),
            "grid3d" => Ok(DatasetConfig::grid3d()),
            "intel" => Ok(DatasetConfig::intel()),
            "garage" => Ok(DatasetConfig::garage()),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?} (expected grid2d, grid3d, intel or garage)"
            ))),
        }
    }

    pub fn m(&self) -> usize {
        self.n_landmarks * self.obs_per_landmark
    }

    pub fn shape(&self) -> Result<Vec<usize>> {
        let shape = match &self.grid_shape {
            Some(s) => s.clone(),
            None => default_shape(self.dim, self.n_poses),
        };
        if shape.len() != self.dim.d() {
            return Err(Error::InvalidArgument(format!(
                "grid shape {shape:?} does not have {} axes",
                self.dim.d()
            )));
        }
        if shape.iter().product::<usize>() != self.n_poses {
            return Err(Error::InvalidArgument(format!(
                "grid shape {shape:?} does not hold {} poses",
                self.n_poses
            )));
        }
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_poses == 0 {
            return Err(Error::InvalidArgument("n_poses must be positive".into()));
        }
        if self.n_landmarks == 0 || self.obs_per_landmark == 0 {
            return Err(Error::InvalidArgument(
                "n_landmarks and obs_per_landmark must be positive".into(),
            ));
        }
        if self.obs_per_landmark > self.n_poses {
            return Err(Error::InvalidArgument(format!(
                "obs_per_landmark {} exceeds n_poses {}",
                self.obs_per_landmark, self.n_poses
            )));
        }
        for (what, v) in [
            ("odom_trans_std", self.odom_trans_std),
            ("odom_rot_std", self.odom_rot_std),
            ("lm_std", self.lm_std),
            ("inflation", self.inflation),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{what} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.spacing > 0.0) {
            return Err(Error::InvalidArgument("spacing must be positive".into()));
        }
        Ok(())
    }

    /// Grid dataset drawn from `ChaCha8Rng` seeded with `self.seed`.
    pub fn generate(&self) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        generate_grid(self, &mut rng)
    }
}

/// Near-square (near-cubic) factorization of `n`, largest axis first.
fn default_shape(dim: Dim, n: usize) -> Vec<usize> {
    let divisors: Vec<usize> = (1..=n).filter(|k| n % k == 0).collect();
    match dim {
        Dim::Two => {
            let a = divisors.iter().copied().filter(|a| a * a <= n).max().unwrap_or(1);
            vec![n / a, a]
        }
        Dim::Three => {
            let mut best = vec![n, 1, 1];
            for &a in &divisors {
                for &b in &divisors {
                    if a * b == 0 || n % (a * b) != 0 {
                        continue;
                    }
                    let c = n / (a * b);
                    let cand = vec![a, b, c];
                    let spread = |s: &[usize]| s.iter().max().unwrap() - s.iter().min().unwrap();
                    if spread(&cand) < spread(&best) {
                        best = cand;
                    }
                }
            }
            best.sort_unstable_by(|x, y| y.cmp(x));
            best
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub trajectory: Vec<Pose>,
    pub landmarks: Vec<Point>,
    /// 0-based landmark index per measurement.
    pub associations: Vec<usize>,
}

impl GroundTruth {
    pub fn k(&self) -> usize {
        self.landmarks.len()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub problem: SlamProblem,
    pub ground_truth: Option<GroundTruth>,
    pub config: Option<DatasetConfig>,
}

impl Dataset {
    pub fn dim(&self) -> Dim {
        self.problem.dim
    }

    pub fn m(&self) -> usize {
        self.problem.m()
    }

    pub fn k_true(&self) -> Option<usize> {
        self.ground_truth.as_ref().map(GroundTruth::k)
    }

    pub fn require_ground_truth(&self) -> Result<&GroundTruth> {
        self.ground_truth.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("dataset {:?} carries no ground truth", self.name))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        for o in &p.odometry {
            if o.from >= p.n_poses || o.to >= p.n_poses {
                return Err(Error::IndexOutOfRange {
                    what: "pose",
                    index: o.from.max(o.to),
                    limit: p.n_poses,
                });
            }
        }
        for m in &p.measurements {
            if m.pose >= p.n_poses {
                return Err(Error::IndexOutOfRange {
                    what: "pose",
                    index: m.pose,
                    limit: p.n_poses,
                });
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.trajectory.len() != p.n_poses {
                return Err(Error::DimensionMismatch {
                    expected: p.n_poses,
                    found: gt.trajectory.len(),
                });
            }
            if gt.associations.len() != p.m() {
                return Err(Error::DimensionMismatch {
                    expected: p.m(),
                    found: gt.associations.len(),
                });
            }
            if let Some(&j) = gt.associations.iter().find(|&&j| j >= gt.landmarks.len()) {
                return Err(Error::IndexOutOfRange {
                    what: "landmark",
                    index: j,
                    limit: gt.landmarks.len(),
                });
            }
        }
        Ok(())
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    g * std
}

/// Boustrophedon ordering of the cells of `shape` (axis 0 fastest), so
/// consecutive cells are grid neighbours.
fn snake(shape: &[usize]) -> Vec<Vec<usize>> {
    match shape.split_last() {
        None => vec![vec![]],
        Some((&last, rest)) => {
            let inner = snake(rest);
            let mut out = Vec::with_capacity(inner.len() * last);
            for v in 0..last {
                let mut layer: Vec<Vec<usize>> = inner
                    .iter()
                    .map(|c| {
                        let mut c = c.clone();
                        c.push(v);
                        c
                    })
                    .collect();
                if v % 2 == 1 {
                    layer.reverse();
                }
                out.extend(layer);
            }
            out
        }
    }
}

/// Ground-truth snake trajectory; each pose faces the next one.
pub fn grid_trajectory(dim: Dim, shape: &[usize], spacing: f64) -> Vec<Pose> {
    let positions: Vec<Vector3<f64>> = snake(shape)
        .into_iter()
        .map(|c| {
            let mut p = Vector3::zeros();
            for (axis, v) in c.into_iter().enumerate() {
                p[axis] = v as f64 * spacing;
            }
            p
        })
        .collect();
    let n = positions.len();
    let mut poses = Vec::with_capacity(n);
    let mut heading = (0.0, 0.0);
    for i in 0..n {
        if i + 1 < n {
            let d = positions[i + 1] - positions[i];
            // a vertical step keeps the previous yaw
            if d.x != 0.0 || d.y != 0.0 {
                heading.0 = d.y.atan2(d.x);
            }
            heading.1 = (-d.z).atan2(d.x.hypot(d.y));
        }
        let t = positions[i];
        poses.push(match dim {
            Dim::Two => Pose::planar(heading.0, t.x, t.y),
            Dim::Three => {
                let q = UnitQuaternion::from_euler_angles(0.0, heading.1, heading.0);
                Pose::spatial(&q, t)
            }
        });
    }
    poses
}

/// Landmarks sampled uniformly in the inflated bounding box of `trajectory`,
/// each measured from its `n` nearest poses with isotropic noise `lm_std`.
/// Measurements are ordered by pose, then landmark.
pub fn inject_landmarks<R: Rng + ?Sized>(
    trajectory: &[Pose],
    config: &DatasetConfig,
    rng: &mut R,
) -> Result<(Vec<Point>, Vec<Measurement>, Vec<usize>)> {
    let dim = config.dim;
    if trajectory.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if config.obs_per_landmark > trajectory.len() {
        return Err(Error::InvalidArgument(format!(
            "obs_per_landmark {} exceeds n_poses {}",
            config.obs_per_landmark,
            trajectory.len()
        )));
    }
    let d = dim.d();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in trajectory {
        lo = lo.inf(p.translation());
        hi = hi.sup(p.translation());
    }
    let mut landmarks = Vec::with_capacity(config.n_landmarks);
    for _ in 0..config.n_landmarks {
        let mut y = Vector3::zeros();
        for axis in 0..d {
            let extent = hi[axis] - lo[axis];
            let margin = config.inflation * if extent > 0.0 { extent } else { config.spacing };
            y[axis] = rng.random_range(lo[axis] - margin..=hi[axis] + margin);
        }
        landmarks.push(y);
    }
    let n = config.obs_per_landmark;
    let mut pairs = Vec::with_capacity(n * landmarks.len());
    for (j, y) in landmarks.iter().enumerate() {
        let mut by_distance: Vec<(f64, usize)> = trajectory
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.translation() - y).norm_squared(), i))
            .collect();
        by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pairs.extend(by_distance[..n].iter().map(|&(_, i)| (i, j)));
    }
    pairs.sort_unstable();
    let mut measurements = Vec::with_capacity(pairs.len());
    let mut associations = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let mut z = trajectory[i].predict_measurement(&landmarks[j]);
        for axis in 0..d {
            z[axis] += gaussian(rng, config.lm_std);
        }
        measurements.push(Measurement { pose: i, z });
        associations.push(j);
    }
    Ok((landmarks, measurements, associations))
}

/// Relative pose perturbed in the tangent chart by independent Gaussian noise.
pub fn noisy_odometry<R: Rng + ?Sized>(
    relative: &Pose,
    rot_std: f64,
    trans_std: f64,
    rng: &mut R,
) -> Pose {
    let delta = match relative.dim() {
        Dim::Two => Tangent::planar(
            gaussian(rng, rot_std),
            gaussian(rng, trans_std),
            gaussian(rng, trans_std),
        ),
        Dim::Three => Tangent::spatial(
            Vector3::from_fn(|_, _| gaussian(rng, rot_std)),
            Vector3::from_fn(|_, _| gaussian(rng, trans_std)),
        ),
    };
    relative.retract(&delta)
}

/// Synthetic grid world: snake trajectory, uniformly placed landmarks and
/// noisy odometry and landmark measurements.
pub fn generate_grid<R: Rng + ?Sized>(config: &DatasetConfig, rng: &mut R) -> Result<Dataset> {
    config.validate()?;
    let shape = config.shape()?;
    let trajectory = grid_trajectory(config.dim, &shape, config.spacing);
    let (landmarks, measurements, associations) = inject_landmarks(&trajectory, config, rng)?;
    let odometry = trajectory
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let rel = w[0].between(&w[1])?;
            let meas = noisy_odometry(&rel, config.odom_rot_std, config.odom_trans_std, rng);
            Ok(OdometryFactor::with_stds(i, i + 1, meas, config.odom_rot_std, config.odom_trans_std))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: config.name.clone(),
        problem: SlamProblem {
            dim: config.dim,
            n_poses: config.n_poses,
            odometry,
            measurements,
            sigma: config.lm_std,
        },
        ground_truth: Some(GroundTruth {
            trajectory,
            landmarks,
            associations,
        }),
        config: Some(config.clone()),
    })
}

/// Landmark SLAM with the ground-truth associations, started from odometry
/// and first-observation landmarks. Its trajectory is the accuracy reference.
pub fn reference_solution(dataset: &Dataset, lm: &LmConfig) -> Result<SolveResult> {
    let gt = dataset.require_ground_truth()?;
    let problem = &dataset.problem;
    let poses = problem.odometry_trajectory();
    let landmarks = first_observation_init(problem, &gt.associations, &poses)?;
    let graph = build_slam_graph(problem, &gt.associations)?;
    let mut result = optimize_lm(&graph, &Estimate { poses, landmarks }, lm)?;
    result.associations = gt.associations.clone();
    Ok(result)
}
