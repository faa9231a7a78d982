//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, overrides and sweep merging.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_themis-sim"))
}

const CONFIG: &str = r#"
[cluster]
racks = [[[2, 2], [2, 2], [4]]]

[policy]
scheduler = "themis"
f = 0.8
lease_s = 600.0
candidate_cap = 128

[workload.synthetic]
app_count = 4
jobs_per_app_min = 2
jobs_per_app_max = 4
mean_interarrival_s = 400.0
median_task_gpu_s = 3000.0
duration_scale_divisor = 1.0

[seeds]
seed = 5
horizon_s = 500000.0
"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, CONFIG).unwrap();
    path
}

#[test]
fn simulate_writes_outputs_and_emits_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--emit-cdf", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("apps.csv")).unwrap();
    assert!(csv.starts_with("scheduler,seed,app_id"));
    assert_eq!(csv.lines().count(), 5); // header + 4 apps
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["scheduler"], "themis");
    assert_eq!(summary["seed"], 5);
    assert!(out.join("cdf_rho.txt").exists());
    assert!(out.join("cdf_placement.txt").exists());
}

#[test]
fn scheduler_and_seed_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--scheduler", "tiresias", "--seed", "9", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("apps.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("tiresias,9,"));
}

#[test]
fn unknown_scheduler_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--scheduler", "fifo", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn workload_file_override_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let wl = dir.path().join("one.wl");
    std::fs::write(&wl, "0,0,single,1000,4,compute,10:100:4:1:10:0\n").unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--workload")
        .arg(&wl)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("apps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2); // header + the single app
}

#[test]
fn sweep_runs_points_in_parallel_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("sweep");
    let status = bin()
        .env("THEMIS_SIM_THREADS", "2")
        .args(["sweep", "--config"])
        .arg(&config)
        .args([
            "--param",
            "f",
            "--values",
            "0.4,0.8",
            "--seeds-per-value",
            "2",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let merged = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(merged.lines().count(), 5); // header + 2 values x 2 seeds
    assert!(out.join("f_0.4/seed_5/apps.csv").exists());
    assert!(out.join("f_0.8/seed_6/summary.json").exists());

    // a second identical sweep produces identical bytes
    let out2 = dir.path().join("sweep2");
    bin()
        .env("THEMIS_SIM_THREADS", "1")
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "f", "--values", "0.4,0.8", "--seeds-per-value", "2", "--out"])
        .arg(&out2)
        .status()
        .unwrap();
    assert_eq!(
        std::fs::read(out.join("sweep.csv")).unwrap(),
        std::fs::read(out2.join("sweep.csv")).unwrap()
    );
}

#[test]
fn sweep_rejects_unknown_param() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "warp", "--values", "1", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_example_and_check_properties_pass() {
    let status = bin().arg("validate-example").status().unwrap();
    assert!(status.success());
    let status = bin()
        .args(["check-properties", "--instances", "300", "--sp-instances", "40"])
        .status()
        .unwrap();
    assert!(status.success());
}
