use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn dustcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dustcast")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dustcast(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One synthetic dataset and quick bundle shared by the tests in this file.
struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train_stdout: String,
}

impl Workspace {
    fn merged(&self) -> PathBuf {
        self.root.join("merged.csv")
    }

    fn bundle(&self) -> PathBuf {
        self.root.join("bundle")
    }
}

fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let raw = root.join("raw");
        ok(&["synth", "--out", s(&raw), "--days", "300"]);
        ok(&[
            "ingest",
            "--meteo",
            s(&raw.join("meteo.csv")),
            "--aod",
            s(&raw.join("aod.csv")),
            "--lat",
            "24.75",
            "--lon",
            "55.0",
            "--radius-km",
            "20",
            "--out",
            s(&root.join("merged.csv")),
        ]);
        let train_stdout = ok(&[
            "train",
            "--data",
            s(&root.join("merged.csv")),
            "--out",
            s(&root.join("bundle")),
            "--quick",
        ]);
        Workspace {
            _dir: dir,
            root,
            train_stdout,
        }
    })
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = dustcast(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(dustcast(&[]).status.code(), Some(2));
    assert_eq!(dustcast(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_are_usage_errors() {
    assert_eq!(dustcast(&["forecast"]).status.code(), Some(2));
    assert_eq!(dustcast(&["scenario", "--bundle", "x"]).status.code(), Some(2));
    assert_eq!(dustcast(&["scenario", "--bundle", "x", "--delta-t2m", "1.0"]).status.code(), Some(2));
    assert_eq!(dustcast(&["explain", "--bundle", "x", "--stage", "3"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dustcast(&["forecast", "--bundle", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));

    let out = dustcast(&["control", "--forecast", s(&dir.path().join("nope.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_prints_metrics_for_both_stages() {
    let w = workspace();
    let report: Value = serde_json::from_str(&w.train_stdout).unwrap();
    for stage in ["stage1", "stage2"] {
        let m = &report[stage];
        assert!(m["rmse"].as_f64().unwrap().is_finite(), "{stage}: {m}");
        assert!(m["mae"].as_f64().unwrap().is_finite());
        assert!(m["n"].as_u64().unwrap() > 0);
    }
    assert!(w.bundle().join("manifest.json").is_file());
}

#[test]
fn forecast_then_control_yields_thirty_directives() {
    let w = workspace();
    let dir = tempfile::tempdir().unwrap();
    let fc = dir.path().join("fc.json");
    let csv = dir.path().join("fc.csv");
    ok(&["forecast", "--bundle", s(&w.bundle()), "--out", s(&fc), "--csv", s(&csv)]);
    let body: Value = serde_json::from_str(&std::fs::read_to_string(&fc).unwrap()).unwrap();
    assert_eq!(body["horizon"], 30);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 31);

    let directives: Value = serde_json::from_str(&ok(&["control", "--forecast", s(&fc)])).unwrap();
    let list = directives.as_array().unwrap();
    assert_eq!(list.len(), 30);
    assert_eq!(list[0]["date"], body["dates"][0]);
    assert!(list.iter().all(|d| d["pretreatment"] == false));

    let salty: Value = serde_json::from_str(&ok(&["control", "--forecast", s(&fc), "--salinity", "46"])).unwrap();
    assert!(salty.as_array().unwrap().iter().all(|d| d["pretreatment"] == true));
}

#[test]
fn scenario_preset_reports_deltas() {
    let w = workspace();
    let preset: Value =
        serde_json::from_str(&ok(&["scenario", "--preset", "paper", "--bundle", s(&w.bundle())])).unwrap();
    assert_eq!(preset["scenario"]["delta_t2m"], 1.5);
    assert_eq!(preset["scenario"]["aod_multiplier"], 1.2);
    assert_eq!(preset["aod_delta"].as_array().unwrap().len(), 30);
    assert!(preset["mean_efficiency_loss_delta"].as_f64().unwrap().is_finite());

    let explicit: Value = serde_json::from_str(&ok(&[
        "scenario",
        "--delta-t2m",
        "1.5",
        "--aod-multiplier",
        "1.2",
        "--bundle",
        s(&w.bundle()),
    ]))
    .unwrap();
    assert_eq!(explicit["aod_delta"], preset["aod_delta"]);

    let identity: Value = serde_json::from_str(&ok(&[
        "scenario",
        "--delta-t2m",
        "0",
        "--aod-multiplier",
        "1",
        "--bundle",
        s(&w.bundle()),
    ]))
    .unwrap();
    assert!(identity["aod_delta"].as_array().unwrap().iter().all(|d| d.as_f64() == Some(0.0)));
}

#[test]
fn explain_writes_a_ranked_summary() {
    let w = workspace();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("summary.csv");
    let stdout = ok(&["explain", "--bundle", s(&w.bundle()), "--stage", "2", "--horizon", "5", "--out", s(&csv)]);
    assert!(stdout.lines().next().unwrap().starts_with("rank"));
    let lines: Vec<String> = std::fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[1].ends_with(",1"));
}

#[test]
fn evaluate_prints_the_baseline_table() {
    let w = workspace();
    let stdout = ok(&[
        "evaluate",
        "--data",
        s(&w.merged()),
        "--bundle",
        s(&w.bundle()),
        "--baselines",
        "linear,xgboost",
    ]);
    assert!(stdout.contains("linear"));
    assert!(stdout.contains("gradient-boosted-trees"));
    let out = dustcast(&["evaluate", "--data", s(&w.merged()), "--bundle", s(&w.bundle()), "--baselines", "prophet"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_paths_and_presets() {
    let w = workspace();
    let dir = tempfile::tempdir().unwrap();
    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/example.toml");
    let text = std::fs::read_to_string(example)
        .unwrap()
        .replace("../data/bundle", s(&w.bundle()))
        .replace("horizon = 30", "horizon = 6");
    let cfg = dir.path().join("site.toml");
    std::fs::write(&cfg, text).unwrap();

    let fc: Value = serde_json::from_str(&ok(&["--config", s(&cfg), "forecast"])).unwrap();
    assert_eq!(fc["horizon"], 6);
    let mild: Value = serde_json::from_str(&ok(&["--config", s(&cfg), "scenario", "--preset", "mild"])).unwrap();
    assert_eq!(mild["scenario"]["label"], "mild");
    assert_eq!(dustcast(&["--config", s(&cfg), "scenario", "--preset", "nope"]).status.code(), Some(2));
}
