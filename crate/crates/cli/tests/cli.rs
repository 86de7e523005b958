//! End-to-end tests driving the compiled `powerdse` binary: artifact
//! layout, determinism, override precedence, exit codes, and the
//! batch/run/calibrate contracts.

use std::path::Path;
use std::process::Command;

use powerdse::presets;
use powerdse::scenario::{self, ScenarioConfig};

fn powerdse() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_powerdse"));
    // Isolate from any ambient overrides.
    for (key, _) in std::env::vars() {
        if key.starts_with("POWERDSE_") {
            cmd.env_remove(&key);
        }
    }
    cmd
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary should spawn");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout should be UTF-8")
}

fn run_err(cmd: &mut Command, expected_code: i32) -> String {
    let out = cmd.output().expect("binary should spawn");
    assert_eq!(
        out.status.code(),
        Some(expected_code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("cannot read {path:?}: {e}"))
}

#[test]
fn run_writes_config_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nominal");
    run_ok(powerdse().args(["run", "--preset", "scenario1", "--out"]).arg(&out));

    // The echoed config round-trips to exactly the preset that was run.
    let echoed = ScenarioConfig::from_file(&out.join("config.toml")).unwrap();
    assert_eq!(echoed, presets::load("scenario1").unwrap());

    let trace = powerdse::trace::ScenarioTrace::import_csv(&out.join("trace.csv")).unwrap();
    assert_eq!(trace.rows(), 501);
    assert_eq!(trace.filters.len(), 3);

    let metrics: scenario::RunMetrics =
        serde_json::from_str(&read(&out.join("metrics.json"))).unwrap();
    assert_eq!(metrics.seed, echoed.noise.seed);
    assert_eq!(metrics.filters.len(), 3);
}

#[test]
fn identical_invocations_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(
            powerdse()
                .args(["run", "--preset", "scenario4-replay", "--seed", "11", "--out"])
                .arg(out),
        );
    }
    for name in ["config.toml", "trace.csv", "metrics.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn flag_overrides_reach_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    run_ok(
        powerdse()
            .args([
                "run", "--preset", "scenario1", "--seed", "777", "--filters", "ckf", "--out",
            ])
            .arg(&out),
    );
    let metrics: scenario::RunMetrics =
        serde_json::from_str(&read(&out.join("metrics.json"))).unwrap();
    assert_eq!(metrics.seed, 777);
    assert_eq!(metrics.filters.len(), 1);

    // The CSV layout is fixed (all filter blocks in the header); filters
    // that did not run leave their cells empty and drop out on import.
    let trace = powerdse::trace::ScenarioTrace::import_csv(&out.join("trace.csv")).unwrap();
    assert_eq!(trace.filters.len(), 1);
    assert_eq!(trace.filters[0].kind, powerdse::filters::FilterKind::Ckf);
}

#[test]
fn env_overrides_apply_and_explicit_flags_win() {
    let dir = tempfile::tempdir().unwrap();

    let out = dir.path().join("env");
    run_ok(
        powerdse()
            .env("POWERDSE_SEED", "123")
            .args(["run", "--preset", "scenario1", "--out"])
            .arg(&out),
    );
    let metrics: scenario::RunMetrics =
        serde_json::from_str(&read(&out.join("metrics.json"))).unwrap();
    assert_eq!(metrics.seed, 123, "env override ignored");

    let out = dir.path().join("flag");
    run_ok(
        powerdse()
            .env("POWERDSE_SEED", "123")
            .args(["run", "--preset", "scenario1", "--seed", "9", "--out"])
            .arg(&out),
    );
    let metrics: scenario::RunMetrics =
        serde_json::from_str(&read(&out.join("metrics.json"))).unwrap();
    assert_eq!(metrics.seed, 9, "explicit flag should beat the environment");
}

#[test]
fn attack_none_strips_the_attack() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    run_ok(
        powerdse()
            .args(["run", "--preset", "scenario4-dos", "--attack", "none", "--out"])
            .arg(&out),
    );
    let echoed = ScenarioConfig::from_file(&out.join("config.toml")).unwrap();
    assert!(echoed.attack.is_none());
    let metrics: scenario::RunMetrics =
        serde_json::from_str(&read(&out.join("metrics.json"))).unwrap();
    assert_eq!(metrics.attack_window, None);
}

#[test]
fn config_problems_exit_2_and_name_the_culprit() {
    let dir = tempfile::tempdir().unwrap();

    let stderr = run_err(
        powerdse().args(["run", "--config", "/no/such/config.toml"]),
        2,
    );
    assert!(stderr.contains("/no/such/config.toml"), "got: {stderr}");

    let stderr = run_err(powerdse().args(["run", "--preset", "scenario99"]), 2);
    assert!(stderr.contains("scenario99"), "got: {stderr}");
    assert!(stderr.contains("scenario1"), "should list presets: {stderr}");

    // A typoed key is named in the error.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[niose]\nq_std = 0.1\n").unwrap();
    let stderr = run_err(powerdse().arg("run").arg("--config").arg(&bad), 2);
    assert!(stderr.contains("niose"), "got: {stderr}");

    let stderr = run_err(
        powerdse().args(["run", "--preset", "scenario1", "--config", "x.toml"]),
        2,
    );
    assert!(stderr.contains("mutually exclusive"), "got: {stderr}");
}

#[test]
fn batch_with_one_run_reproduces_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (run_out, batch_out) = (dir.path().join("run"), dir.path().join("batch"));
    run_ok(
        powerdse()
            .args(["run", "--preset", "scenario1", "--seed", "5", "--out"])
            .arg(&run_out),
    );
    run_ok(
        powerdse()
            .args(["batch", "--preset", "scenario1", "--seed", "5", "--runs", "1", "--out"])
            .arg(&batch_out),
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&read(&run_out.join("metrics.json"))).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&read(&batch_out.join("summary.json"))).unwrap();
    assert_eq!(summary["runs"], 1);
    assert_eq!(summary["per_run"][0], metrics, "batch run 0 should equal the single run");
}

#[test]
fn batch_summary_carries_confidence_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    run_ok(
        powerdse()
            .args(["batch", "--preset", "scenario1", "--runs", "3", "--out"])
            .arg(&out),
    );
    let summary: scenario::MonteCarloSummary =
        serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary.runs, 3);
    assert_eq!(summary.per_run.len(), 3);
    for a in &summary.aggregate {
        assert!(a.mean_err_norm_ci95.is_finite());
        assert!(a.rmse_ci95.iter().all(|c| c.is_finite()));
    }
    // The echoed config reflects the --runs override.
    let echoed = ScenarioConfig::from_file(&out.join("config.toml")).unwrap();
    assert_eq!(echoed.monte_carlo_runs, 3);
}

#[test]
fn calibrate_writes_a_deterministic_self_describing_file() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.toml"), dir.path().join("b.toml"));
    for out in [&a, &b] {
        run_ok(
            powerdse()
                .args(["calibrate", "--preset", "scenario1", "--runs", "7", "--out"])
                .arg(out),
        );
    }
    let text = read(&a);
    assert_eq!(text, read(&b), "calibration must be deterministic");
    assert!(text.starts_with('#'), "provenance comment missing:\n{text}");

    let parsed: toml::Value = toml::from_str(&text).unwrap();
    let written = parsed["detector"]["euclid_threshold"].as_float().unwrap();
    let expected =
        scenario::calibrate_from_config(&presets::load("scenario1").unwrap(), 7, 1.0).unwrap();
    assert_eq!(written, expected, "file threshold should round-trip the library value");
}

#[test]
fn calibrate_refuses_attacked_configs() {
    let stderr = run_err(
        powerdse().args(["calibrate", "--preset", "scenario4-dos", "--out", "/tmp/unused.toml"]),
        2,
    );
    assert!(stderr.contains("attack-free"), "got: {stderr}");
    assert!(!Path::new("/tmp/unused.toml").exists(), "refusal must not write");
}

#[test]
fn plot_renders_panels_from_the_csv_alone() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    run_ok(
        powerdse()
            .args(["run", "--preset", "scenario4-dos", "--out"])
            .arg(&out),
    );

    // Default channels: the four states.
    let fig = out.join("states.svg");
    run_ok(
        powerdse()
            .arg("plot")
            .arg("--trace")
            .arg(out.join("trace.csv"))
            .arg("--out")
            .arg(&fig),
    );
    let svg = read(&fig);
    assert!(svg.starts_with("<svg"));
    for title in ["rotor angle", "speed deviation", "e_q′", "e_d′"] {
        assert!(svg.contains(title), "{title} missing");
    }

    // Detector channels with thresholds from the preset.
    let fig = out.join("detect.svg");
    run_ok(
        powerdse()
            .arg("plot")
            .arg("--trace")
            .arg(out.join("trace.csv"))
            .args(["--channels", "g,d", "--preset", "scenario4-dos", "--out"])
            .arg(&fig),
    );
    let svg = read(&fig);
    assert_eq!(
        svg.matches("stroke-dasharray").count(),
        2,
        "each detector panel should carry a threshold line"
    );

    let stderr = run_err(
        powerdse()
            .arg("plot")
            .arg("--trace")
            .arg(out.join("trace.csv"))
            .args(["--channels", "voltage"]),
        2,
    );
    assert!(stderr.contains("voltage"), "got: {stderr}");
    assert!(stderr.contains("delta, domega"), "should list channels: {stderr}");
}

#[test]
fn list_presets_names_every_preset() {
    let stdout = run_ok(powerdse().arg("list-presets"));
    assert_eq!(stdout.lines().count(), presets::names().len());
    for name in presets::names() {
        assert!(stdout.contains(name), "{name} missing:\n{stdout}");
    }
}
