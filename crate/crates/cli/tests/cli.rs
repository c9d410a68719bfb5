use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"
seed = 11
days = 75
within = 0.8
across = 0.02

[[clusters]]
peak_hour = 7.5
spread_hours = 1.0

[[clusters]]
peak_hour = 20.0
spread_hours = 1.5

[[appliances]]
id = "kettle"
power = 1800.0
startups_per_day = 2.0
duration_minutes = [15.0, 25.0]
cluster = 0

[[appliances]]
id = "toaster"
power = 900.0
startups_per_day = 2.0
duration_minutes = [12.0, 20.0]
cluster = 0

[[appliances]]
id = "tv"
power = 150.0
startups_per_day = 1.5
duration_minutes = [60.0, 120.0]
cluster = 1

[[appliances]]
id = "console"
power = 110.0
startups_per_day = 1.0
duration_minutes = [30.0, 90.0]
cluster = 1
"#;

const CONFIG: &str = r#"
[input]
synth = "house.toml"
[clustering]
k = 2
[forecast]
train_months = 2
window_days = 1
[forecast.train]
max_epochs = 3
"#;

fn loadassoc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadassoc"))
        .current_dir(dir)
        .env_remove("LOADASSOC_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("house.toml"), SPEC).unwrap();
    fs::write(dir.path().join("pipeline.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn run_uses_root_from_env_and_skips_current_stages() {
    let dir = setup();
    let root = dir.path().join("out");
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_loadassoc"))
            .current_dir(dir.path())
            .env("LOADASSOC_ROOT", &root)
            .args(["run", "--config", "pipeline.toml"])
            .output()
            .unwrap()
    };
    let first = run();
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("evaluate/report.json")).unwrap()).unwrap();
    assert!(report["overall"]["rmse"].as_f64().unwrap() > 0.0);
    assert!(report["proposed"]["mae"].as_f64().unwrap() > 0.0);

    let second = run();
    assert_eq!(code(&second), 0);
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert_eq!(stdout.lines().filter(|l| l.ends_with("up to date")).count(), 8, "{stdout}");
}

#[test]
fn missing_artifact_exits_with_data_error() {
    let dir = setup();
    let o = loadassoc(dir.path(), &["run", "--config", "pipeline.toml", "--root", "empty", "--from", "cluster"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("q.csv"), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("empty/error.json")).unwrap()).unwrap();
    assert_eq!(report["stage"], "cluster");
    assert_eq!(report["kind"], "data");
}

#[test]
fn bad_config_exits_with_config_error() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[association]\ntarget_window = 100000\n").unwrap();
    let o = loadassoc(dir.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    fs::write(dir.path().join("typo.toml"), "[events]\non_treshold = 5.0\n").unwrap();
    let o = loadassoc(dir.path(), &["synth", "--config", "typo.toml", "--spec", "house.toml", "--out", "ds"]);
    assert_eq!(code(&o), 2);
    let o = loadassoc(dir.path(), &["run"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_training_exits_with_stage_failure() {
    let dir = setup();
    fs::write(
        dir.path().join("hot.toml"),
        "[forecast]\ntrain_months = 2\nwindow_days = 1\n[forecast.train]\nlearning_rate = 1e300\nclip_norm = 1e300\nmax_epochs = 3\n",
    )
    .unwrap();
    let ok = |args: &[&str]| {
        let o = loadassoc(dir.path(), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    };
    ok(&["synth", "--spec", "house.toml", "--out", "ds"]);
    ok(&["events", "--in", "ds", "--out", "ev"]);
    ok(&["associate", "--events", "ev", "--out", "q.csv"]);
    ok(&["cluster", "--q", "q.csv", "--k", "2", "--out", "clusters.json"]);
    ok(&["dcc", "--in", "ds", "--clusters", "clusters.json", "--train-months", "2", "--out", "dcc.csv"]);
    let o = loadassoc(
        dir.path(),
        &["train", "--config", "hot.toml", "--in", "ds", "--clusters", "clusters.json", "--features", "dcc.csv", "--out", "models"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn subcommands_chain_and_config_overrides_flags() {
    let dir = setup();
    fs::write(dir.path().join("events.toml"), "[events]\non_threshold = 40.0\n").unwrap();
    let ok = |args: &[&str]| {
        let o = loadassoc(dir.path(), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    ok(&["synth", "--spec", "house.toml", "--out", "ds"]);
    assert!(dir.path().join("ds/planted.json").is_file());

    ok(&["events", "--config", "events.toml", "--in", "ds", "--on-threshold", "15", "--min-duration", "3", "--out", "ev"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ev/events.json")).unwrap()).unwrap();
    assert_eq!(manifest["on_threshold"], 40.0);
    assert_eq!(manifest["min_duration"], 3);

    ok(&["associate", "--events", "ev", "--te", "1800", "--ts", "86400", "--out", "q.csv"]);
    assert!(fs::read_to_string(dir.path().join("q.csv")).unwrap().starts_with(','));

    let stdout = ok(&["cluster", "--q", "q.csv", "--k", "auto", "--seed", "7", "--events", "ev", "--out", "clusters.json"]);
    assert!(stdout.starts_with("k = "));

    ok(&["dcc", "--in", "ds", "--clusters", "clusters.json", "--train-months", "2", "--out", "dcc.csv"]);
    ok(&[
        "train", "--in", "ds", "--clusters", "clusters.json", "--features", "dcc.csv", "--threshold", "0.3", "--train-months", "2",
        "--window-days", "1", "--epochs", "2", "--out", "models",
    ]);
    ok(&["forecast", "--models", "models", "--in", "ds", "--date", "2012-06-10", "--out", "one/forecast.csv"]);
    let rows = fs::read_to_string(dir.path().join("one/forecast.csv")).unwrap();
    assert!(rows.lines().skip(1).all(|l| l.contains("2012-06-10")));

    ok(&["forecast", "--models", "models", "--in", "ds", "--out", "fc/forecast.csv"]);
    let report = ok(&["evaluate", "--forecasts", "fc", "--truth", "ds", "--out", "report.json"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(report["conservation_error"].as_f64().unwrap() < 1e-9);

    let o = loadassoc(dir.path(), &["forecast", "--models", "models", "--in", "ds", "--date", "2030-01-01", "--out", "x.csv"]);
    assert_eq!(code(&o), 3);
}
