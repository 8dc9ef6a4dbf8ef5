use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dafslam::datasets::{load_g2o, optimize_pose_graph, reference_solution};
use dafslam::eval::{ate, objective_curve, EvalReport};
use dafslam::experiment::{run_method, run_sweep, trial_dataset, MethodParams, SweepSpec};
use dafslam::kslam::{beta_heuristic, BETA_TAIL};
use dafslam::{Dataset, DatasetConfig, LmConfig, Method, SolveResult};

/// Input that could not be read or is invalid; reported with exit code 2.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into()))
}

#[derive(Parser)]
#[command(name = "dafslam", version, about = "Batch landmark SLAM with unknown data association")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (grid, or landmarks around a g2o pose graph).
    Generate(GenerateArgs),
    /// Run one method on a dataset.
    Solve(SolveArgs),
    /// Monte-Carlo parameter sweep, written as CSV.
    Sweep(SweepArgs),
    /// Score a saved result, or print the penalized objective curve.
    Eval(EvalArgs),
    /// Summarize a g2o pose graph.
    G2oInspect(G2oArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: grid2d, grid3d, intel or garage.
    #[arg(long)]
    preset: Option<String>,
    /// Inject landmarks around this pose graph instead of a grid.
    #[arg(long)]
    pose_graph: Option<PathBuf>,
    #[arg(long, env = "DAFSLAM_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    n_poses: Option<usize>,
    #[arg(long)]
    n_landmarks: Option<usize>,
    #[arg(long)]
    obs_per_landmark: Option<usize>,
    #[arg(long)]
    odom_trans_std: Option<f64>,
    #[arg(long)]
    odom_rot_std: Option<f64>,
    #[arg(long)]
    lm_std: Option<f64>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// odom, ml, oracle or kslam.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Method settings (JSON); flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Per-landmark penalty. Defaults to the χ² heuristic from the true landmark count.
    #[arg(long)]
    beta: Option<f64>,
    /// True landmark count, used for the default `beta` and checked by oracle.
    #[arg(long)]
    k_true: Option<usize>,
    #[arg(long)]
    n_k: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    chi2_tail: Option<f64>,
    #[arg(long, env = "DAFSLAM_SEED")]
    seed: Option<u64>,
    /// Full result (JSON).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Evaluation row (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, env = "DAFSLAM_SEED")]
    base_seed: Option<u64>,
    /// Comma-separated subset of odom, ml, oracle, kslam.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n_k: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Saved result to score against the ground-truth-association reference.
    #[arg(long, required_unless_present = "curve")]
    result: Option<PathBuf>,
    /// Comma-separated K values: print the best-of-restarts objective curve instead.
    #[arg(long, value_delimiter = ',', conflicts_with = "result")]
    curve: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, env = "DAFSLAM_SEED")]
    seed: Option<u64>,
    /// Compare raw translations without rigid alignment.
    #[arg(long)]
    no_align: bool,
    #[arg(long, default_value = "result")]
    method: String,
}

#[derive(Args)]
struct G2oArgs {
    path: PathBuf,
    /// Also optimize the full graph and report the drift of the chained odometry.
    #[arg(long)]
    optimize: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} {}", path.display()))
        .map_err(usage)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid {what} {}", path.display()))
        .map_err(usage)
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(path)
        .with_context(|| format!("cannot load dataset {}", path.display()))
        .map_err(usage)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => read_json::<DatasetConfig>(path, "dataset config")?,
        (None, Some(name)) => DatasetConfig::preset(name).map_err(usage)?,
        (None, None) => DatasetConfig::grid2d(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                config.$field = v;
            }
        )*};
    }
    apply!(seed, name, n_poses, n_landmarks, obs_per_landmark, odom_trans_std, odom_rot_std, lm_std);
    if args.n_poses.is_some() {
        config.grid_shape = None;
    }
    config.validate().map_err(usage)?;
    let dataset = match &args.pose_graph {
        None => config.generate()?,
        Some(path) => {
            let graph = load_g2o(path)
                .with_context(|| format!("cannot load pose graph {}", path.display()))
                .map_err(usage)?;
            trial_dataset(&config, Some(&graph), &LmConfig::default())?
        }
    };
    dataset
        .save(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "wrote {}: {} poses, {} measurements, {} landmarks",
        args.out.display(),
        dataset.problem.n_poses,
        dataset.m(),
        dataset.k_true().unwrap_or(0)
    );
    Ok(())
}

fn reference_trajectory(dataset: &Dataset) -> anyhow::Result<Option<Vec<dafslam::Pose>>> {
    if dataset.ground_truth.is_none() {
        return Ok(None);
    }
    Ok(Some(reference_solution(dataset, &LmConfig::default())?.trajectory))
}

fn solve(args: SolveArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let mut params = match &args.params {
        Some(path) => read_json::<MethodParams>(path, "method params")?,
        None => MethodParams::default(),
    };
    if let (Some(k), Some(gt)) = (args.k_true, &dataset.ground_truth) {
        if k != gt.k() {
            return Err(usage(anyhow!("--k-true {k} disagrees with the dataset's ground truth ({})", gt.k())));
        }
    }
    if args.method == Method::Oracle && dataset.ground_truth.is_none() {
        return Err(usage(anyhow!("oracle needs ground-truth associations, which the dataset does not contain")));
    }
    if let Some(b) = args.beta {
        params.beta = Some(b);
    } else if params.beta.is_none() {
        if let Some(k) = args.k_true {
            if k == 0 {
                return Err(usage(anyhow!("--k-true must be positive")));
            }
            params.beta = Some(beta_heuristic(dataset.dim().d(), dataset.m() as f64 / k as f64, BETA_TAIL).map_err(usage)?);
        }
    }
    if args.method == Method::Kslam && params.beta.is_none() && dataset.ground_truth.is_none() {
        return Err(usage(anyhow!("kslam needs --beta or --k-true when the dataset has no ground truth")));
    }
    if let Some(v) = args.n_k {
        params.kslam.n_k = v;
    }
    if let Some(v) = args.max_iterations {
        params.kslam.max_iterations = v;
        params.oracle.max_iters = v;
    }
    if let Some(v) = args.chi2_tail {
        params.ml.chi2_tail = v;
    }
    if let Some(v) = args.seed {
        params.kslam.seed = v;
    }
    if args.method == Method::Kslam {
        let mut check = params.kslam.clone();
        check.beta = params.beta_for(&dataset).map_err(usage)?;
        check.validate().map_err(usage)?;
    }

    let started = Instant::now();
    let result = run_method(&dataset, args.method, &params)?;
    let runtime = started.elapsed().as_secs_f64();
    let reference = reference_trajectory(&dataset)?;
    let ate_rmse = match &reference {
        Some(r) => Some(ate(&result.trajectory, r, true)?),
        None => None,
    };

    println!("method: {}", args.method);
    match ate_rmse {
        Some(a) => println!("ate_rmse: {a:.6}"),
        None => println!("ate_rmse: n/a (no ground truth)"),
    }
    println!("k_est: {}", result.k());
    if let Some(k) = dataset.k_true() {
        println!("k_true: {k}");
    }
    println!("objective: {:.6}", result.objective);
    println!("runtime_sec: {runtime:.3}");

    if let Some(path) = &args.out {
        write_json(path, &result)?;
    }
    if let Some(path) = &args.report {
        let report = EvalReport::new(
            args.method.name(),
            ate_rmse.unwrap_or(f64::NAN),
            result.k(),
            dataset.k_true(),
            runtime,
            params.kslam.seed,
        );
        write_json(path, &report)?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let mut spec = read_json::<SweepSpec>(&args.spec, "sweep spec")?;
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.base_seed {
        spec.base_seed = s;
    }
    if let Some(m) = args.methods {
        spec.methods = m;
    }
    if let Some(b) = args.beta {
        spec.params.beta = Some(b);
    }
    if let Some(n) = args.n_k {
        spec.params.kslam.n_k = n;
    }
    if let Some(p) = &spec.pose_graph {
        if p.is_relative() {
            if let Some(dir) = args.spec.parent() {
                spec.pose_graph = Some(dir.join(p));
            }
        }
    }
    spec.validate().map_err(usage)?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let file = File::create(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    let rows = run_sweep(&spec, jobs, BufWriter::new(file))?;
    let failed = rows.iter().filter(|r| r.ate_rmse.is_none()).count();
    println!("wrote {} rows to {} ({failed} failed)", rows.len(), args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    if let Some(ks) = &args.curve {
        let m = dataset.m();
        if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > m) {
            return Err(usage(anyhow!("K = {bad} outside 1..={m}")));
        }
        let params = MethodParams {
            beta: args.beta,
            ..MethodParams::default()
        };
        let mut config = params.kslam.clone();
        config.beta = params.beta_for(&dataset).map_err(usage)?;
        if let Some(s) = args.seed {
            config.seed = s;
        }
        let x = dataset.problem.odometry_trajectory();
        let curve = objective_curve(&dataset.problem, &x, ks, args.restarts, &config).map_err(usage)?;
        let stdout = io::stdout();
        let mut out = csv::Writer::from_writer(stdout.lock());
        for point in &curve {
            out.serialize(point)?;
        }
        out.flush()?;
        return Ok(());
    }
    let path = args.result.as_ref().expect("clap requires --result without --curve");
    let result: SolveResult = read_json(path, "result")?;
    let reference = reference_trajectory(&dataset)?
        .ok_or_else(|| usage(anyhow!("dataset has no ground truth to evaluate against")))?;
    let a = ate(&result.trajectory, &reference, !args.no_align).map_err(usage)?;
    let report = EvalReport::new(
        &args.method,
        a,
        result.k(),
        dataset.k_true(),
        result.wall_time_sec,
        args.seed.unwrap_or(0),
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn g2o_inspect(args: G2oArgs) -> anyhow::Result<()> {
    let graph = load_g2o(&args.path)
        .with_context(|| format!("cannot load pose graph {}", args.path.display()))
        .map_err(usage)?;
    let dim = graph.dim.map_or("none".to_string(), |d| format!("{}D", d.d()));
    println!("dimension: {dim}");
    println!("vertices: {}", graph.vertices.len());
    println!("edges: {}", graph.edges.len());
    println!("loop_closures: {}", graph.loop_closures());
    let chain = (0..graph.vertices.len().saturating_sub(1))
        .all(|i| graph.edges.iter().any(|e| e.from == i && e.to == i + 1));
    println!("odometry_chain_complete: {chain}");
    if args.optimize && !graph.vertices.is_empty() {
        let optimized = optimize_pose_graph(&graph, &LmConfig::default())?;
        let drift = ate(&graph.vertices, &optimized, true)?;
        println!("initial_vs_optimized_ate: {drift:.6}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::G2oInspect(a) => g2o_inspect(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
