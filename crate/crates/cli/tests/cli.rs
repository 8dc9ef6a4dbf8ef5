use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dafslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dafslam"))
        .args(args)
        .env_remove("DAFSLAM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .to_string()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn small_noiseless(dir: &TempDir) -> String {
    let path = dir.path().join("clean.json");
    let p = path.to_str().unwrap().to_string();
    let o = dafslam(&[
        "generate", "--n-poses", "30", "--n-landmarks", "5", "--obs-per-landmark", "4", "--odom-trans-std", "0",
        "--odom-rot-std", "0", "--lm-std", "0", "--seed", "4", "--out", &p,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn generate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = dafslam(&["generate", "--n-poses", "40", "--n-landmarks", "6", "--seed", "9", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("flag.json");
    let b = dir.path().join("env.json");
    let base = ["generate", "--n-poses", "20", "--n-landmarks", "4", "--obs-per-landmark", "3"];
    let o = dafslam(&[&base[..], &["--seed", "77", "--out", a.to_str().unwrap()]].concat());
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_dafslam"))
        .args(base)
        .args(["--out", b.to_str().unwrap()])
        .env("DAFSLAM_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn default_config_has_thousand_measurements() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("grid.json");
    let o = dafslam(&["generate", "--preset", "grid2d", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("1000 measurements"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["measurements"].as_array().unwrap().len(), 1000);
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"name": "mine", "n_poses": 12, "n_landmarks": 3, "obs_per_landmark": 4}"#).unwrap();
    let out = dir.path().join("d.json");
    let o = dafslam(&["generate", "--config", cfg.to_str().unwrap(), "--n-landmarks", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("12 poses, 8 measurements, 2 landmarks"));
}

#[test]
fn missing_or_invalid_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.json");
    let o = dafslam(&["generate", "--config", "/definitely/not/here.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n_poses": 10, "bogus": 1}"#).unwrap();
    let o = dafslam(&["generate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = dafslam(&["generate", "--n-poses", "5", "--obs-per-landmark", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn odom_on_noiseless_data_has_zero_error() {
    let dir = TempDir::new().unwrap();
    let data = small_noiseless(&dir);
    let o = dafslam(&["solve", "--dataset", &data, "--method", "odom"]);
    assert!(o.status.success());
    let ate: f64 = field(&stdout(&o), "ate_rmse").parse().unwrap();
    assert!(ate < 1e-6);
}

#[test]
fn kslam_recovers_landmark_count_and_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let data = small_noiseless(&dir);
    let result = dir.path().join("r.json");
    let report = dir.path().join("report.json");
    let o = dafslam(&[
        "solve", "--dataset", &data, "--method", "kslam", "--k-true", "5", "--out", result.to_str().unwrap(), "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(field(&out, "k_est"), "5");
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(r["landmarks"].as_array().unwrap().len(), 5);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["k_delta"], 0);

    let o = dafslam(&["eval", "--dataset", &data, "--result", result.to_str().unwrap(), "--method", "kslam"]);
    assert!(o.status.success());
    let ev: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(ev["k_est"], 5);
    assert!(ev["ate_rmse"].as_f64().unwrap() < 1e-6);
}

#[test]
fn oracle_without_ground_truth_is_an_error() {
    let dir = TempDir::new().unwrap();
    let data = small_noiseless(&dir);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&data).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("ground_truth");
    let stripped = dir.path().join("nogt.json");
    fs::write(&stripped, v.to_string()).unwrap();
    let o = dafslam(&["solve", "--dataset", stripped.to_str().unwrap(), "--method", "oracle", "--k-true", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ground-truth"));
    let o = dafslam(&["solve", "--dataset", &data, "--method", "oracle", "--k-true", "5"]);
    assert!(o.status.success());
    let o = dafslam(&["solve", "--dataset", stripped.to_str().unwrap(), "--method", "kslam"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dafslam(&["solve", "--dataset", stripped.to_str().unwrap(), "--method", "kslam", "--beta", "30"]);
    assert!(o.status.success());
    assert!(field(&stdout(&o), "ate_rmse").starts_with("n/a"));
}

#[test]
fn unknown_method_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = small_noiseless(&dir);
    let o = dafslam(&["solve", "--dataset", &data, "--method", "magic"]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_spec(dir: &TempDir) -> PathBuf {
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"dataset": {"name": "tiny", "n_poses": 20, "n_landmarks": 4, "obs_per_landmark": 5},
            "param": "odom_noise", "values": [0.05], "methods": ["kslam"], "trials": 2, "base_seed": 3}"#,
    )
    .unwrap();
    spec
}

fn without_runtime(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn sweep_rows_and_rerun() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (p, jobs) in [(&a, "2"), (&b, "1")] {
        let o = dafslam(&["sweep", "--spec", spec.to_str().unwrap(), "--out", p.to_str().unwrap(), "--jobs", jobs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        "dataset,method,param_name,param_value,trial,seed,ate_rmse,k_est,k_true,runtime_sec"
    );
    assert!(lines[1].starts_with("tiny,kslam,odom_noise,0.05,0,3,"));
    assert!(lines[2].starts_with("tiny,kslam,odom_noise,0.05,1,4,"));
    assert_eq!(without_runtime(&text), without_runtime(&fs::read_to_string(&b).unwrap()));
}

#[test]
fn sweep_flags_override_spec() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir);
    let out = dir.path().join("o.csv");
    let o = dafslam(&[
        "sweep", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--trials", "1", "--methods", "odom,ml",
        "--base-seed", "50",
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("tiny,odom,odom_noise,0.05,0,50,"));
    assert!(lines[1].starts_with("tiny,ml,odom_noise,0.05,0,50,"));
}

#[test]
fn unwritable_sweep_output_exits_1() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir);
    let o = dafslam(&["sweep", "--spec", spec.to_str().unwrap(), "--out", "/nonexistent-dir/out.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn objective_curve_csv() {
    let dir = TempDir::new().unwrap();
    let data = small_noiseless(&dir);
    let o = dafslam(&["eval", "--dataset", &data, "--curve", "1,5,20", "--restarts", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "k,f_slam,penalized");
    assert_eq!(lines.len(), 4);
    let o = dafslam(&["eval", "--dataset", &data, "--curve", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn g2o_inspect_and_semireal_generation() {
    let se2 = fixture("se2.g2o");
    let o = dafslam(&["g2o-inspect", se2.to_str().unwrap(), "--optimize"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(field(&out, "dimension"), "2D");
    assert_eq!(field(&out, "vertices"), "5");
    assert_eq!(field(&out, "loop_closures"), "2");
    assert_eq!(field(&out, "odometry_chain_complete"), "true");
    assert!(out.contains("initial_vs_optimized_ate"));

    let dir = TempDir::new().unwrap();
    let data = dir.path().join("semi.json");
    let o = dafslam(&[
        "generate", "--pose-graph", se2.to_str().unwrap(), "--n-landmarks", "2", "--obs-per-landmark", "3", "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("5 poses, 6 measurements, 2 landmarks"));

    let bad = dir.path().join("bad.g2o");
    fs::write(&bad, "VERTEX_SE2 0 0 0 0\nFOO 1 2\n").unwrap();
    let o = dafslam(&["g2o-inspect", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}
