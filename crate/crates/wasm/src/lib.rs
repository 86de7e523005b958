//! Browser bindings for the scenario engine: three JSON-returning entry
//! points behind `wasm-bindgen`, consumed by the static page in `www/`.
//!
//! Build for the web with
//! `wasm-pack build crates/wasm --target web --out-dir ../../www/pkg`,
//! then serve `www/` from any static file server.
//!
//! The exported functions wrap plain-Rust implementations so the logic also
//! compiles and tests on the host; only the thin `JsError` conversion is
//! wasm-specific.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use powerdse::attack::AttackKind;
use powerdse::presets;
use powerdse::scenario::{self, RunMetrics, ScenarioConfig};
use powerdse::{Error, Result};

/// Built-in presets as `[{ "name": ..., "description": ... }]`.
#[wasm_bindgen]
pub fn presets_json() -> String {
    #[derive(Serialize)]
    struct Entry {
        name: &'static str,
        description: String,
    }
    let entries: Vec<Entry> = presets::PRESETS
        .iter()
        .map(|(name, text)| Entry {
            name,
            description: text
                .lines()
                .map_while(|l| l.strip_prefix('#'))
                .map(str::trim)
                .collect::<Vec<_>>()
                .join(" "),
        })
        .collect();
    serde_json::to_string(&entries).expect("static strings serialize")
}

/// Simulate one run of a preset and return the full trace, detector
/// thresholds, and metrics as JSON. `attack` is `keep`, `none`, or an
/// attack kind overriding the preset's `[attack]` table.
#[wasm_bindgen]
pub fn run_json(preset: &str, seed: u32, attack: &str, alpha: f64) -> std::result::Result<String, JsError> {
    run_json_impl(preset, seed, attack, alpha).map_err(|e| JsError::new(&e.to_string()))
}

/// Derive the Euclidean alarm threshold for a preset from attack-free
/// repetitions (the preset's attack, if any, is stripped first) and return
/// it as JSON.
#[wasm_bindgen]
pub fn calibrate_json(preset: &str, runs: u32) -> std::result::Result<String, JsError> {
    calibrate_json_impl(preset, runs).map_err(|e| JsError::new(&e.to_string()))
}

/// One filter's columns in the run payload.
#[derive(Serialize)]
struct FilterPayload {
    kind: String,
    /// Estimates per state: four arrays in `[δ, Δω, e_q′, e_d′]` order.
    estimates: [Vec<f64>; 4],
    g: Vec<f64>,
    d: Vec<f64>,
    chi2_alarm: Vec<u8>,
    euclid_alarm: Vec<u8>,
}

/// Everything the page needs to draw one run. Non-finite statistics (the
/// first sample has no residual yet) serialize as JSON `null`.
#[derive(Serialize)]
struct RunPayload {
    t: Vec<f64>,
    truth: [Vec<f64>; 4],
    y_clean: Vec<f64>,
    y_attacked: Vec<f64>,
    filters: Vec<FilterPayload>,
    chi2_threshold: f64,
    euclid_threshold: f64,
    attack_window: Option<[f64; 2]>,
    metrics: RunMetrics,
}

fn state_columns(states: &[powerdse::machine::StateVector]) -> [Vec<f64>; 4] {
    let mut cols: [Vec<f64>; 4] = Default::default();
    for x in states {
        let a = x.to_array();
        for (col, v) in cols.iter_mut().zip(a) {
            col.push(v);
        }
    }
    cols
}

fn load_with_overrides(preset: &str, seed: u32, attack: &str, alpha: f64) -> Result<ScenarioConfig> {
    let mut cfg = presets::load(preset)?;
    cfg.noise.seed = u64::from(seed);
    match attack {
        "keep" | "" => {}
        "none" => cfg.attack = None,
        kind => {
            let kind = match kind {
                "random" => AttackKind::Random,
                "dos" => AttackKind::Dos,
                "replay" => AttackKind::Replay,
                "fdi" => AttackKind::Fdi,
                other => {
                    return Err(Error::config(format!(
                        "unknown attack override {other:?} (expected keep, none, random, dos, replay, or fdi)"
                    )))
                }
            };
            match cfg.attack.as_mut() {
                Some(spec) => spec.kind = kind,
                None => {
                    return Err(Error::config(format!(
                        "preset {preset:?} has no [attack] table to override; pick an attack preset"
                    )))
                }
            }
        }
    }
    cfg.detector.alpha = alpha;
    cfg.detector.chi2_threshold = None;
    cfg.validate()?;
    Ok(cfg)
}

fn run_json_impl(preset: &str, seed: u32, attack: &str, alpha: f64) -> Result<String> {
    let cfg = load_with_overrides(preset, seed, attack, alpha)?;
    let det = cfg.detector_config()?;
    let (trace, metrics) = scenario::run_scenario(&cfg)?;
    let payload = RunPayload {
        t: trace.t.clone(),
        truth: state_columns(&trace.true_states),
        y_clean: trace.y_clean.clone(),
        y_attacked: trace.y_attacked.clone(),
        filters: trace
            .filters
            .iter()
            .map(|f| FilterPayload {
                kind: f.kind.name().to_string(),
                estimates: state_columns(&f.estimates),
                g: f.g_chi2.clone(),
                d: f.d_euclid.clone(),
                chi2_alarm: f.chi2_alarm.iter().map(|&b| u8::from(b)).collect(),
                euclid_alarm: f.euclid_alarm.iter().map(|&b| u8::from(b)).collect(),
            })
            .collect(),
        chi2_threshold: det.chi2_threshold,
        euclid_threshold: det.euclid_threshold,
        attack_window: metrics.attack_window,
        metrics,
    };
    serde_json::to_string(&payload)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
}

fn calibrate_json_impl(preset: &str, runs: u32) -> Result<String> {
    let mut cfg = presets::load(preset)?;
    // Calibration must see attack-free data; the demo strips the attack so
    // every preset's noise configuration can be calibrated directly.
    cfg.attack = None;
    let filters = cfg.filters.len().max(1);
    if (runs as usize) * filters < 20 {
        return Err(Error::config(format!(
            "calibration pools {filters} filter streams per run and needs at least 20; \
             ask for {} or more runs",
            20usize.div_ceil(filters)
        )));
    }
    let threshold = scenario::calibrate_from_config(&cfg, runs as usize, 1.0)?;
    #[derive(Serialize)]
    struct Payload {
        preset: String,
        runs: u32,
        base_seed: u64,
        euclid_threshold: f64,
    }
    let payload = Payload {
        preset: preset.to_string(),
        runs,
        base_seed: cfg.noise.seed,
        euclid_threshold: threshold,
    };
    serde_json::to_string(&payload)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
}
