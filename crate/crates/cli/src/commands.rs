//! Subcommand implementations.

use std::fmt::Write as _;

use powerdse::detect::chi2_threshold_for;
use powerdse::presets;
use powerdse::scenario::{self, MonteCarloSummary, RunMetrics, ScenarioConfig};
use powerdse::trace::ScenarioTrace;
use powerdse::{Error, Result};

use crate::args::{BatchArgs, CalibrateArgs, PlotArgs, RunArgs};
use crate::output::write_atomic;
use crate::plot::{self, Thresholds};

/// `powerdse run`: one simulation, three artifacts. The effective config is
/// echoed first so a failed run still documents what was attempted.
pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.select.load()?;
    let out = &args.out;
    write_atomic(&out.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
    let (trace, metrics) = scenario::run_scenario(&cfg)?;
    write_atomic(&out.join("trace.csv"), trace.to_csv_string().as_bytes())?;
    write_atomic(&out.join("metrics.json"), to_json(&metrics)?.as_bytes())?;
    println!(
        "seed {} | {} rows | wrote config.toml, trace.csv, metrics.json to {}",
        metrics.seed,
        trace.rows(),
        out.display()
    );
    print!("{}", run_table(&metrics));
    Ok(())
}

/// `powerdse batch`: Monte-Carlo repetition with aggregate statistics.
pub fn batch(args: &BatchArgs) -> Result<()> {
    let mut cfg = args.select.load()?;
    if let Some(runs) = args.runs {
        cfg.monte_carlo_runs = runs;
        cfg.validate()?;
    }
    let out = &args.out;
    write_atomic(&out.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
    let summary = scenario::run_monte_carlo(&cfg)?;
    write_atomic(&out.join("summary.json"), to_json(&summary)?.as_bytes())?;
    println!(
        "{} runs from base seed {} | wrote config.toml, summary.json to {}",
        summary.runs,
        summary.base_seed,
        out.display()
    );
    print!("{}", batch_table(&summary));
    Ok(())
}

/// `powerdse calibrate`: pool the Euclidean detector statistic over
/// attack-free runs and write the resulting threshold as a detector config
/// file. Refuses configs with an active attack — calibrating on attacked
/// data would bake the attack into the alarm level.
pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let cfg = args.select.load()?;
    if cfg.active_attack().is_some() {
        return Err(Error::config(
            "calibration needs an attack-free config; rerun with `--attack none` \
             or pick a clean preset",
        ));
    }
    let runs = args.runs.unwrap_or(cfg.monte_carlo_runs);
    let threshold = scenario::calibrate_from_config(&cfg, runs, args.skip_transient)?;
    let text = detector_file_text(&cfg, runs, args.skip_transient, threshold);
    write_atomic(&args.out, text.as_bytes())?;
    println!("euclid_threshold = {threshold}");
    println!("wrote {}", args.out.display());
    Ok(())
}

/// `powerdse plot`: render a trace CSV. The CSV is the only data source —
/// nothing is re-simulated; a config merely supplies threshold lines.
pub fn plot(args: &PlotArgs) -> Result<()> {
    let trace = ScenarioTrace::import_csv(&args.trace).map_err(|e| match e {
        Error::Io(io) => Error::config(format!("cannot read trace {}: {io}", args.trace.display())),
        other => other,
    })?;
    let channels = plot::resolve_channels(&args.channels)?;
    let thresholds = plot_thresholds(args)?;
    let svg = plot::render(&trace, &channels, &thresholds)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.trace.with_extension("svg"));
    write_atomic(&out, svg.as_bytes())?;
    println!("wrote {} ({} panels)", out.display(), channels.len());
    Ok(())
}

/// `powerdse list-presets`: names plus the first line of each preset's
/// header comment.
pub fn list_presets() -> Result<()> {
    for (name, text) in presets::PRESETS {
        let blurb = text
            .lines()
            .find_map(|l| l.strip_prefix('#'))
            .map(str::trim)
            .unwrap_or("");
        println!("{name:<18} {blurb}");
    }
    Ok(())
}

/// Threshold lines for the detector panels: from the given config or
/// preset when available, else the chi-square quantile at alpha = 0.01 and
/// no Euclidean line (the trace itself does not carry thresholds).
fn plot_thresholds(args: &PlotArgs) -> Result<Thresholds> {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), None) => Some(ScenarioConfig::from_file(path).map_err(|e| match e {
            Error::Io(io) => Error::config(format!("cannot read config {}: {io}", path.display())),
            other => other,
        })?),
        (None, Some(name)) => Some(presets::load(name)?),
        _ => None,
    };
    match cfg {
        Some(cfg) => {
            let det = cfg.detector_config()?;
            Ok(Thresholds {
                chi2: det.chi2_threshold,
                euclid: Some(det.euclid_threshold),
            })
        }
        None => Ok(Thresholds {
            chi2: chi2_threshold_for(1, 0.01)?,
            euclid: None,
        }),
    }
}

/// Pretty JSON with a trailing newline.
fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    s.push('\n');
    Ok(s)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

/// Per-filter metrics table for a single run.
fn run_table(metrics: &RunMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>10} {:>10} {:>8} {:>9} {:>11}",
        "filter", "rmse_delta", "err_norm", "mean_g", "chi2_duty", "euclid_duty"
    );
    for f in &metrics.filters {
        let _ = writeln!(
            s,
            "{:<6} {:>10.4} {:>10.4} {:>8} {:>9} {:>11}",
            f.kind.name(),
            f.rmse[0],
            f.mean_err_norm,
            fmt_opt(f.mean_g),
            fmt_opt(f.chi2_duty),
            fmt_opt(f.euclid_duty),
        );
    }
    s
}

/// Per-filter aggregate table for a batch.
fn batch_table(summary: &MonteCarloSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>14} {:>9} {:>9} {:>12} {:>13}",
        "filter", "err_norm_mean", "ci95", "chi2_det", "chi2_lat_med", "euclid_lat_med"
    );
    for a in &summary.aggregate {
        let _ = writeln!(
            s,
            "{:<6} {:>14.4} {:>9.4} {:>9} {:>12} {:>13}",
            a.kind.name(),
            a.mean_err_norm_mean,
            a.mean_err_norm_ci95,
            format!("{}/{}", a.chi2_detected_runs, summary.runs),
            fmt_opt(a.chi2_latency_median),
            fmt_opt(a.euclid_latency_median),
        );
    }
    s
}

/// Detector config file emitted by `calibrate`: the derived threshold plus
/// the settings it was derived under, all stated in the header so the file
/// is self-describing and reproducible.
fn detector_file_text(
    cfg: &ScenarioConfig,
    runs: usize,
    skip_transient: f64,
    threshold: f64,
) -> String {
    let filters: Vec<&str> = cfg.filters.iter().map(|k| k.name()).collect();
    let mut s = format!(
        "# Euclidean alarm threshold calibrated on attack-free runs of this scenario:\n\
         # {runs} runs from base seed {seed}, first {skip} s of each run discarded,\n\
         # detector statistic pooled over {filters}. The threshold is 1.2 times the\n\
         # 99.9th percentile of the pooled samples, so it clears everything the\n\
         # calibration runs produced, with margin.\n\
         [detector]\n\
         alpha = {alpha}\n",
        seed = cfg.noise.seed,
        skip = skip_transient,
        filters = filters.join(", "),
        alpha = cfg.detector.alpha,
    );
    if let Some(chi2) = cfg.detector.chi2_threshold {
        let _ = writeln!(s, "chi2_threshold = {chi2}");
    }
    let _ = writeln!(s, "euclid_threshold = {threshold}");
    let _ = writeln!(s, "euclid_window = {}", cfg.detector.euclid_window);
    s
}
