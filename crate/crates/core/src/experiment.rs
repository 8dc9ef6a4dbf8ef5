//! Method dispatch and the Monte-Carlo sweep harness.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{first_observation_init, ml_solve, odom_solve, oracle_solve, MlConfig, OracleConfig};
use crate::datasets::{load_g2o, make_semireal, reference_solution, Dataset, DatasetConfig, PoseGraph};
use crate::error::{Error, Result};
use crate::eval::{ate, EvalReport};
use crate::factor_graph::{LmConfig, SolveResult};
use crate::kslam::{beta_heuristic, outer_solve, KslamConfig, BETA_TAIL};

/// Version of the sweep CSV column layout.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Odom,
    Ml,
    Oracle,
    Kslam,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Odom, Method::Ml, Method::Oracle, Method::Kslam];

    pub fn name(self) -> &'static str {
        match self {
            Method::Odom => "odom",
            Method::Ml => "ml",
            Method::Oracle => "oracle",
            Method::Kslam => "kslam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?} (expected odom, ml, oracle or kslam)")))
    }
}

/// Per-method settings. `kslam.beta` is replaced by the heuristic when
/// `beta` is `None`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodParams {
    pub beta: Option<f64>,
    pub kslam: KslamConfig,
    pub ml: MlConfig,
    pub oracle: OracleConfig,
}

impl MethodParams {
    /// `β` to use on `dataset`: the explicit value, else the χ² heuristic
    /// with the true average number of observations per landmark.
    pub fn beta_for(&self, dataset: &Dataset) -> Result<f64> {
        if let Some(b) = self.beta {
            return Ok(b);
        }
        let k = dataset.k_true().ok_or_else(|| {
            Error::InvalidArgument("beta is required when the dataset has no ground truth".into())
        })?;
        beta_heuristic(dataset.dim().d(), dataset.m() as f64 / k as f64, BETA_TAIL)
    }
}

/// Runs `method` on `dataset`. Oracle requires ground truth.
pub fn run_method(dataset: &Dataset, method: Method, params: &MethodParams) -> Result<SolveResult> {
    let problem = &dataset.problem;
    match method {
        Method::Odom => Ok(odom_solve(problem)),
        Method::Ml => ml_solve(problem, &params.ml),
        Method::Oracle => {
            let gt = dataset.require_ground_truth()?;
            let x = problem.odometry_trajectory();
            let y = first_observation_init(problem, &gt.associations, &x)?;
            oracle_solve(problem, &x, &y, &params.oracle)
        }
        Method::Kslam => {
            let config = KslamConfig {
                beta: params.beta_for(dataset)?,
                ..params.kslam.clone()
            };
            let x = problem.odometry_trajectory();
            Ok(outer_solve(problem, &x, &config)?.result)
        }
    }
}

/// Report for `result` against `reference` (aligned ATE).
pub fn evaluate(
    dataset: &Dataset,
    method: &str,
    result: &SolveResult,
    reference: &[crate::geometry::Pose],
    seed: u64,
) -> Result<EvalReport> {
    Ok(EvalReport::new(
        method,
        ate(&result.trajectory, reference, true)?,
        result.k(),
        dataset.k_true(),
        result.wall_time_sec,
        seed,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    OdomNoise,
    LmNoise,
    NLandmarks,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::OdomNoise => "odom_noise",
            SweepParam::LmNoise => "lm_noise",
            SweepParam::NLandmarks => "n_landmarks",
        }
    }

    /// `odom_noise` sets the translation std to `value` and the rotation
    /// std to `value / 10`.
    pub fn apply(self, config: &mut DatasetConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::OdomNoise => {
                config.odom_trans_std = value;
                config.odom_rot_std = value / 10.0;
            }
            SweepParam::LmNoise => config.lm_std = value,
            SweepParam::NLandmarks => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!("n_landmarks must be a positive integer, got {value}")));
                }
                config.n_landmarks = value as usize;
            }
        }
        Ok(())
    }
}

fn default_trials() -> usize {
    20
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Semi-real sweeps: landmarks are injected around this pose graph.
    #[serde(default)]
    pub pose_graph: Option<PathBuf>,
    pub param: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub params: MethodParams,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("sweep value list is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        for &v in &self.values {
            let mut c = self.dataset.clone();
            self.param.apply(&mut c, v)?;
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub method: String,
    pub param_name: String,
    pub param_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub ate_rmse: Option<f64>,
    pub k_est: Option<usize>,
    pub k_true: usize,
    pub runtime_sec: Option<f64>,
}

impl SweepRow {
    pub fn k_delta(&self) -> Option<i64> {
        self.k_est.map(|k| k as i64 - self.k_true as i64)
    }
}

/// Builds the dataset for one trial.
pub fn trial_dataset(config: &DatasetConfig, pose_graph: Option<&PoseGraph>, lm: &LmConfig) -> Result<Dataset> {
    match pose_graph {
        None => config.generate(),
        Some(g) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            make_semireal(g, config, lm, &mut rng)
        }
    }
}

/// All rows of one (value, trial) cell, methods in spec order.
pub fn run_trial(spec: &SweepSpec, pose_graph: Option<&PoseGraph>, value: f64, trial: usize) -> Result<Vec<SweepRow>> {
    let seed = spec.base_seed + trial as u64;
    let mut config = spec.dataset.clone();
    spec.param.apply(&mut config, value)?;
    config.seed = seed;
    let lm = &spec.params.kslam.lm;
    let dataset = trial_dataset(&config, pose_graph, lm)?;
    let reference = reference_solution(&dataset, lm)?.trajectory;
    let k_true = dataset.k_true().expect("generated datasets carry ground truth");
    let mut rows = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let started = Instant::now();
        let outcome = run_method(&dataset, method, &spec.params)
            .and_then(|r| Ok((ate(&r.trajectory, &reference, true)?, r.k())));
        let runtime = started.elapsed().as_secs_f64();
        let (ate_rmse, k_est) = match outcome {
            Ok((a, k)) => (Some(a), Some(k)),
            Err(e) => {
                log::warn!("{method} failed on {}={value} trial {trial}: {e}", spec.param.name());
                (None, None)
            }
        };
        log::info!("{} = {value}, trial {trial}, {method}: k_est {k_est:?}, ate {ate_rmse:?}", spec.param.name());
        rows.push(SweepRow {
            dataset: config.name.clone(),
            method: method.to_string(),
            param_name: spec.param.name().to_string(),
            param_value: value,
            trial,
            seed,
            ate_rmse,
            k_est,
            k_true,
            runtime_sec: ate_rmse.map(|_| runtime),
        });
    }
    Ok(rows)
}

/// Runs every (value, trial) cell on `jobs` threads and streams the rows to
/// `out` as CSV in deterministic order, flushing after each completed cell.
pub fn run_sweep<W: Write>(spec: &SweepSpec, jobs: usize, out: W) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let graph = spec.pose_graph.as_ref().map(load_g2o).transpose()?;
    let cells: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut writer = csv::Writer::from_writer(out);
    let mut all = Vec::new();
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<SweepRow>>)>();
    let mut failure = None;
    pool.in_place_scope(|scope| {
        for (idx, &(value, trial)) in cells.iter().enumerate() {
            let tx = tx.clone();
            let graph = graph.as_ref();
            scope.spawn(move |_| {
                let _ = tx.send((idx, run_trial(spec, graph, value, trial)));
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (idx, rows) in rx {
            pending.insert(idx, rows);
            while let Some(rows) = pending.remove(&next) {
                next += 1;
                if failure.is_some() {
                    continue;
                }
                match rows.and_then(|rows| {
                    for r in &rows {
                        writer.serialize(r)?;
                    }
                    writer.flush()?;
                    Ok(rows)
                }) {
                    Ok(rows) => all.extend(rows),
                    Err(e) => failure = Some(e),
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if all.is_empty() {
        // header only
        writer.write_record(SWEEP_COLUMNS)?;
    }
    writer.flush()?;
    Ok(all)
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "dataset",
    "method",
    "param_name",
    "param_value",
    "trial",
    "seed",
    "ate_rmse",
    "k_est",
    "k_true",
    "runtime_sec",
];

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
