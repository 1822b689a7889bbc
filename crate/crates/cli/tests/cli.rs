use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nla-recover"));
    cmd.env_remove("NLA_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn polynomial_target_is_recovered_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nd = 1\ns = 2.5\np = 2.0\nq = 2.0\n[sweep]\nn_list = [6]\nsigma_list = [0.0]\n[target]\nname = \"quadratic\"\n",
    );
    let out_dir = dir.path().join("out");
    let out = run(&["estimate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["status"], "estimated");
    assert!(report["lq_error"].as_f64().unwrap() <= 1e-9, "{report}");
    assert!(out_dir.join("estimate.bin").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn overwhelming_noise_is_flagged_step0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n[sweep]\nn_list = [4]\nsigma_list = [4.0]\n",
    );
    let out_dir = dir.path().join("out");
    let out = run(&["estimate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["status"], "step0-zero");
    assert!(report["schedule"].is_null());
}

#[test]
fn estimate_reads_an_observation_file() {
    let dir = tempfile::tempdir().unwrap();
    let grid = nla_core::build_grid(5, 1).unwrap();
    let values: Vec<f64> = grid.points().map(|x| 1.0 - x[0]).collect();
    let obs = nla_core::ObservationSet::from_values(grid, values, 0.0).unwrap();
    let obs_path = dir.path().join("obs.json");
    std::fs::write(&obs_path, serde_json::to_string(&obs).unwrap()).unwrap();
    let cfg = write_config(dir.path(), "[problem]\nd = 1\ns = 1.5\np = 2.0\nq = 2.0\n");
    let out_dir = dir.path().join("out");
    let out = run(&[
        "estimate",
        "--config",
        &cfg,
        "--observations",
        obs_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&out_dir.join("report.json"));
    assert!(report["lq_error"].is_null());
    let fit = nla_core::PiecewisePoly::from_bytes(&std::fs::read(out_dir.join("estimate.bin")).unwrap()).unwrap();
    assert!((fit.eval_pwp(&[0.3]).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn sweep_rows_follow_the_schema_and_replay_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment_id = \"m-sweep\"\n[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n[sweep]\nn_list = [4, 5, 6, 7]\nsigma_list = [0.01]\ntrials = 3\nseed = 11\n",
    );
    let out_dir = dir.path().join("out");
    let out = run(&["sweep-m", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("theoretical -2.0000"), "{stdout}");

    let csv = std::fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment_id,d,s,p,q,r,beta,kappa,n,m,sigma,seed,trial,lq_error,runtime_ms"
    );
    assert_eq!(lines.count(), 12);
    let fit = read_json(&out_dir.join("fit.json"));
    assert_eq!(fit["theoretical_slope"].as_f64().unwrap(), -2.0);

    let manifest_path = out_dir.join("manifest.json");
    let manifest = read_json(&manifest_path);
    assert_eq!(manifest["rows"].as_array().unwrap().len(), 12);
    assert_eq!(manifest["non_primary"], false);

    let replay_dir = dir.path().join("again");
    let out = run(&["replay", "--manifest", manifest_path.to_str().unwrap(), "--out", replay_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let strip = |text: &str| -> Vec<String> {
        text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    let again = std::fs::read_to_string(replay_dir.join("rows.csv")).unwrap();
    assert_eq!(strip(&csv), strip(&again));
    assert_eq!(read_json(&replay_dir.join("manifest.json"))["digest"], manifest["digest"]);
}

#[test]
fn rerunning_an_estimate_gives_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nd = 2\ns = 2.0\np = 2.0\nq = 2.0\n[sweep]\nn_list = [5]\nsigma_list = [0.05]\nseed = 3\n",
    );
    let first = dir.path().join("a");
    assert!(run(&["estimate", "--config", &cfg, "--out", first.to_str().unwrap()]).status.success());
    let manifest = first.join("manifest.json");
    let out = run(&["replay", "--manifest", manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = read_json(&manifest);
    let b = read_json(&first.join("replay").join("manifest.json"));
    assert_eq!(a["outputs"], b["outputs"]);
    assert_eq!(a["digest"], b["digest"]);
}

#[test]
fn tampered_manifest_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n");
    let first = dir.path().join("a");
    assert!(run(&["estimate", "--config", &cfg, "--out", first.to_str().unwrap()]).status.success());
    let path = first.join("manifest.json");
    let mut manifest = read_json(&path);
    manifest["digest"] = Value::String("0".repeat(64));
    std::fs::write(&path, manifest.to_string()).unwrap();
    let out = run(&["replay", "--manifest", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn single_point_sweep_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n[sweep]\nn_list = [6]\n",
    );
    let out = run(&["sweep-m", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("≥3 points required"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_a_config_error_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n\n[estimator]\nkapa = 2.0\n");
    let out = run(&["estimate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("kapa") && err.contains("line 8"), "{err}");
}

#[test]
fn embedding_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nd = 2\ns = 0.8\np = 2.0\nq = 2.0\n");
    let out = run(&["estimate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("compact embedding s > d/p"));
}

#[test]
fn non_primary_runs_warn_and_flag_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nd = 1\ns = 1.5\np = 1.0\nq = 5.0\n[sweep]\nn_list = [5]\n");
    let out_dir = dir.path().join("out");
    let out = run(&["estimate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("primary regime q < p + 2sp/d"));
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["non_primary"], true);
    assert_eq!(manifest["regime"], "non-primary");
}

#[test]
fn validate_thresh_and_fooling_pass() {
    for suite in ["thresh", "fooling"] {
        let out = run(&["validate", suite, "--threads", "2"]);
        assert!(out.status.success(), "{suite}: {}", stderr(&out));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    }
}

#[test]
fn fooling_and_pack_write_fixture_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n");
    let out_dir = dir.path().join("out");
    let out = run(&["fooling", "--n", "4", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_json(&out_dir.join("fooling.json"))[0]["n"], 4);
    let out = run(&["pack", "--n-cells", "8", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let family = read_json(&out_dir.join("packing.json"));
    assert!(family["max_seminorm"].as_f64().unwrap() <= 1.0);
}

#[test]
fn besov_profile_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n[target]\nname = \"cusp\"\n");
    let out_dir = dir.path().join("out");
    let out = run(&["besov-estimate", "--k-max", "5", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = read_json(&out_dir.join("besov.json"));
    assert_eq!(summary["profile"].as_array().unwrap().len(), 6);
}

#[test]
fn missing_config_is_a_config_error() {
    assert_eq!(run(&["sweep-sigma"]).status.code(), Some(2));
}
