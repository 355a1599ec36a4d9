//! End-to-end checks of the binary: exit codes, file outputs, and
//! byte-determinism of everything it writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lnsgd"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_RUN: &str = "\
experiment = cli_demo
model.m = 16
model.d = 4
model.seed = 11
teacher.norm = 0.4
teacher.direction = first_axis
data.mode = fixed
data.n = 128
schedule.0.optimizer = label_noise_sgd
schedule.0.eta = 0.01
schedule.0.sigma = 1.0
schedule.0.steps = 400
schedule.0.record_every = 50
outputs.trace = demo_trace.csv
outputs.summary = demo_summary.json
";

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_writes_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "demo.cfg", SMALL_RUN);

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let result = bin().arg("run").arg(&cfg).arg("--out").arg(out).output().unwrap();
        assert_code(&result, 0);
        let stdout = String::from_utf8_lossy(&result.stdout);
        assert!(stdout.contains("final pop loss"), "{stdout}");
    }
    let trace_a = std::fs::read(out_a.join("demo_trace.csv")).unwrap();
    let trace_b = std::fs::read(out_b.join("demo_trace.csv")).unwrap();
    assert_eq!(trace_a, trace_b, "same config, same seed, same bytes");
    assert!(String::from_utf8_lossy(&trace_a).starts_with("step,train_loss,pop_loss,"));
    let sum_a = std::fs::read(out_a.join("demo_summary.json")).unwrap();
    let sum_b = std::fs::read(out_b.join("demo_summary.json")).unwrap();
    assert_eq!(sum_a, sum_b);
}

#[test]
fn run_rejects_bad_config_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        &format!("{SMALL_RUN}model.typo = 1\nwhatever = 2\n"),
    );
    let result = bin().arg("run").arg(&cfg).output().unwrap();
    assert_code(&result, 2);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("model.typo"), "{stderr}");
    assert!(stderr.contains("whatever"), "{stderr}");
}

#[test]
fn run_missing_file_is_exit_2() {
    let result = bin().arg("run").arg("/nonexistent/x.cfg").output().unwrap();
    assert_code(&result, 2);
}

#[test]
fn divergent_run_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // eta*(m+d) far beyond the stability threshold.
    let cfg = write_config(
        dir.path(),
        "hot.cfg",
        &SMALL_RUN
            .replace("schedule.0.eta = 0.01", "schedule.0.eta = 0.9")
            .replace("model.m = 16", "model.m = 128"),
    );
    let result = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_code(&result, 3);
    // Partial trace flushed before the abort.
    let trace = std::fs::read_to_string(dir.path().join("demo_trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
}

#[test]
fn sweep_produces_aggregate_and_per_point_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "demo.cfg", SMALL_RUN);
    let out = dir.path().join("sweep");
    let result = bin()
        .arg("sweep")
        .arg(&cfg)
        .arg("--grid")
        .arg("schedule.0.sigma=0,1")
        .arg("--grid")
        .arg("model.m=8,16")
        .arg("--out")
        .arg(&out)
        .env("LNSGD_WORKERS", "2")
        .output()
        .unwrap();
    assert_code(&result, 0);
    let agg = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert!(agg.starts_with("point,schedule.0.sigma,model.m,status,"));
    assert_eq!(agg.lines().count(), 5, "header plus four points:\n{agg}");
    for idx in 0..4 {
        assert!(out.join(format!("point_{idx:04}_trace.csv")).exists());
        assert!(out.join(format!("point_{idx:04}_summary.json")).exists());
    }
}

#[test]
fn sweep_without_grid_fails_usage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "demo.cfg", SMALL_RUN);
    let result = bin().arg("sweep").arg(&cfg).output().unwrap();
    assert_eq!(result.status.code(), Some(2), "clap usage error");
}

#[test]
fn sweep_bad_grid_is_exit_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "demo.cfg", SMALL_RUN);
    let result = bin().arg("sweep").arg(&cfg).arg("--grid").arg("nonsense").output().unwrap();
    assert_code(&result, 2);
    assert!(String::from_utf8_lossy(&result.stderr).contains("usage"));
}

#[test]
fn verify_quick_json_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let json_a = dir.path().join("a.json");
    let json_b = dir.path().join("b.json");
    for json in [&json_a, &json_b] {
        let result = bin()
            .arg("verify")
            .arg("quick")
            .arg("--seed")
            .arg("5")
            .arg("--json")
            .arg(json)
            .env("LNSGD_WORKERS", "4")
            .output()
            .unwrap();
        assert_code(&result, 0);
        let stdout = String::from_utf8_lossy(&result.stdout);
        assert!(stdout.contains("checks, 0 failed"), "{stdout}");
    }
    let a = std::fs::read(&json_a).unwrap();
    let b = std::fs::read(&json_b).unwrap();
    assert_eq!(a, b, "same seed twice must be byte-identical");
}

#[test]
fn verify_unknown_suite_is_exit_2() {
    let result = bin().arg("verify").arg("bogus").output().unwrap();
    assert_code(&result, 2);
}

#[test]
fn bundled_configs_parse_and_lemma2_runs() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["fig2.cfg", "fig4.cfg", "appendixE.cfg", "lemma2.cfg"] {
        let text = std::fs::read_to_string(configs.join(name)).unwrap();
        lnsgd::config::parse_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    // lemma2 is the cheapest bundled run; drive it end to end.
    let dir = tempfile::tempdir().unwrap();
    let result = bin()
        .arg("run")
        .arg(configs.join("lemma2.cfg"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_code(&result, 0);
    let summary = std::fs::read_to_string(dir.path().join("lemma2_summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed["experiment"], "lemma2");
    assert!(parsed["aborted"].is_null());
}
