//! Scenario orchestration: one place that wires the truth simulation,
//! measurement attacks, the three filters, and the residual detectors into
//! reproducible, seedable runs with summary metrics.
//!
//! A [`ScenarioConfig`] describes everything about a run and maps 1:1 to a
//! TOML file (see the shipped presets). The truth loop integrates the
//! machine with process noise and possibly faulted parameters; the filters
//! always assume the nominal parameters and noise levels, which is exactly
//! the mismatch the degraded scenarios probe. Everything is deterministic
//! given the seed: Monte-Carlo run `i` uses `base_seed + i·10007`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::attack::{AttackInjector, AttackKind, AttackSpec};
use crate::detect::{calibrate_euclid_threshold, DetectorConfig, ResidualDetector};
use crate::error::{Error, Result};
use crate::filters::{Estimator, FilterKind};
use crate::machine::{
    self, InputVector, MachineParams, NoiseSpec, ParamFault, StateVector,
};
use crate::stats;
use crate::trace::ScenarioTrace;

/// Noise magnitudes and the seed deriving both noise streams. The filters
/// always assume `q_std`/`r_std`; `truth_r_std`/`truth_q_std`, when set,
/// change only the noise actually injected into the simulation
/// (sensor-degradation or robust-tuning mismatch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Per-state process noise density: the standard deviation added per
    /// step is `q_std·√dt`, so the disturbance level does not depend on the
    /// integration step. With the nearly undamped swing mode an unscaled
    /// per-step injection this size would pump the rotor past the stability
    /// boundary in a sizeable fraction of runs.
    pub q_std: f64,
    /// Measurement noise standard deviation the filters assume.
    pub r_std: f64,
    /// Base seed for the run (and for the Monte-Carlo seed schedule).
    pub seed: u64,
    /// Measurement noise standard deviation actually applied to the truth,
    /// if different from `r_std`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_r_std: Option<f64>,
    /// Process noise density actually applied to the truth, if different
    /// from `q_std` (lets the filters run deliberately inflated process
    /// noise — robust tuning — against a quieter plant).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_q_std: Option<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            q_std: 1e-3,
            r_std: 1e-2,
            seed: 0,
            truth_r_std: None,
            truth_q_std: None,
        }
    }
}

/// Deterministic input schedule: constant mechanical torque and a single
/// step in the exciter voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSchedule {
    /// Mechanical torque (pu), constant over the run.
    pub t_m: f64,
    /// Exciter voltage before the step (pu).
    pub e_fd_initial: f64,
    /// Exciter voltage from the step time on (pu).
    pub e_fd_final: f64,
    /// Time (s) of the exciter step; the new value applies from this instant.
    pub e_fd_step_time: f64,
}

impl Default for InputSchedule {
    fn default() -> Self {
        Self {
            t_m: 0.8,
            e_fd_initial: 2.11,
            e_fd_final: 2.32,
            e_fd_step_time: 0.5,
        }
    }
}

impl InputSchedule {
    /// The input vector in effect at time `t`.
    pub fn at(&self, t: f64) -> InputVector {
        let e_fd = if t >= self.e_fd_step_time {
            self.e_fd_final
        } else {
            self.e_fd_initial
        };
        InputVector::new(self.t_m, e_fd)
    }
}

/// True initial state and the filters' initial belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// True state at t = 0: `[δ, Δω, e_q', e_d']`.
    pub x_true: [f64; 4],
    /// Initial estimate handed to every filter.
    pub x_est: [f64; 4],
    /// Diagonal of the initial estimation covariance.
    pub p0_diag: [f64; 4],
}

impl Default for InitialSection {
    fn default() -> Self {
        // The initial spread must keep the cubature points inside one
        // period of the angle-periodic measurement (and the speed spread
        // small enough that ω₀ does not throw the angle points across
        // periods during the first predictions); much wider priors derail
        // the cubature filters even when the initial estimate is exact.
        Self {
            x_true: [0.4, 0.0, 0.0, 0.0],
            x_est: [0.4, 0.0, 0.0, 0.0],
            p0_diag: [0.1; 4],
        }
    }
}

/// Abrupt machine-parameter change applied to the truth only. Fields that
/// are left out keep their pre-fault values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    /// Time (s) at and after which the replacement values apply.
    pub fault_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_inertia: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_do_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_qo_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_d_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_q_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_0: Option<f64>,
}

impl FaultConfig {
    /// The post-fault parameter set: `base` with the overrides applied.
    pub fn faulted_params(&self, base: &MachineParams) -> MachineParams {
        let mut p = *base;
        if let Some(v) = self.d_damping {
            p.d_damping = v;
        }
        if let Some(v) = self.j_inertia {
            p.j_inertia = v;
        }
        if let Some(v) = self.t_do_prime {
            p.t_do_prime = v;
        }
        if let Some(v) = self.t_qo_prime {
            p.t_qo_prime = v;
        }
        if let Some(v) = self.x_d {
            p.x_d = v;
        }
        if let Some(v) = self.x_q {
            p.x_q = v;
        }
        if let Some(v) = self.x_d_prime {
            p.x_d_prime = v;
        }
        if let Some(v) = self.x_q_prime {
            p.x_q_prime = v;
        }
        if let Some(v) = self.v_t {
            p.v_t = v;
        }
        if let Some(v) = self.omega_0 {
            p.omega_0 = v;
        }
        p
    }
}

/// Detector settings. The χ² threshold is normally derived from `alpha`
/// (one degree of freedom for the scalar measurement); an explicit
/// `chi2_threshold` wins when present. The Euclidean threshold has no
/// analytic form — calibrate it on attack-free runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    /// χ² significance level; the threshold is the (1 − alpha) quantile.
    pub alpha: f64,
    /// Explicit χ² threshold overriding `alpha` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi2_threshold: Option<f64>,
    /// Alarm level for the windowed Euclidean statistic.
    pub euclid_threshold: f64,
    /// Euclidean sliding-window length in samples.
    pub euclid_window: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            chi2_threshold: None,
            euclid_threshold: 1.0,
            euclid_window: 10,
        }
    }
}

/// Metrics options.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Interval `[t0, t1]` over which RMSE and mean error norm are taken.
    /// When absent it defaults to the attack window if an attack is
    /// configured, else `[fault_time, horizon]` if a fault is, else the full
    /// horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_interval: Option<[f64; 2]>,
}

/// Complete description of one simulation experiment; maps 1:1 to the TOML
/// preset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Integration and sampling step (s).
    pub dt: f64,
    /// Run length (s).
    pub horizon: f64,
    /// Number of Monte-Carlo repetitions for batch runs.
    pub monte_carlo_runs: usize,
    /// Filters to run side by side on the same measurements.
    pub filters: Vec<FilterKind>,
    pub machine: MachineParams,
    pub noise: NoiseSection,
    pub inputs: InputSchedule,
    pub initial: InitialSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    pub detector: DetectorSection,
    pub metrics: MetricsSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 5.0,
            monte_carlo_runs: 1,
            filters: FilterKind::ALL.to_vec(),
            machine: MachineParams::default(),
            noise: NoiseSection::default(),
            inputs: InputSchedule::default(),
            initial: InitialSection::default(),
            fault: None,
            attack: None,
            detector: DetectorSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parse from TOML text and validate.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate a TOML config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Serialize back to TOML (used to echo effective configs next to run
    /// outputs).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialize error: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::config(format!(
                "horizon must be at least one step ({}), got {}",
                self.dt, self.horizon
            )));
        }
        if self.monte_carlo_runs == 0 {
            return Err(Error::config("monte_carlo_runs must be at least 1".to_string()));
        }
        if self.filters.is_empty() {
            return Err(Error::config("at least one filter must be selected".to_string()));
        }
        for (i, kind) in self.filters.iter().enumerate() {
            if self.filters[..i].contains(kind) {
                return Err(Error::config(format!("filter {kind} selected twice")));
            }
        }
        self.machine.validate()?;
        for (name, value) in [
            ("noise.q_std", self.noise.q_std),
            ("noise.r_std", self.noise.r_std),
            ("noise.truth_r_std", self.noise.truth_r_std.unwrap_or(0.0)),
            ("noise.truth_q_std", self.noise.truth_q_std.unwrap_or(0.0)),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::config(format!(
                    "{name} must be a non-negative number, got {value}"
                )));
            }
        }
        let i = &self.inputs;
        if ![i.t_m, i.e_fd_initial, i.e_fd_final, i.e_fd_step_time]
            .iter()
            .all(|v| v.is_finite())
            || i.e_fd_step_time < 0.0
        {
            return Err(Error::config("inputs must be finite with e_fd_step_time ≥ 0".to_string()));
        }
        let init = &self.initial;
        if !init.x_true.iter().chain(&init.x_est).all(|v| v.is_finite()) {
            return Err(Error::config("initial states must be finite".to_string()));
        }
        if !init.p0_diag.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::config("p0_diag entries must be positive".to_string()));
        }
        if let Some(fault) = &self.fault {
            if !fault.fault_time.is_finite() || fault.fault_time < 0.0 {
                return Err(Error::config(format!(
                    "fault_time must be non-negative, got {}",
                    fault.fault_time
                )));
            }
            fault.faulted_params(&self.machine).validate()?;
        }
        if let Some(attack) = &self.attack {
            attack.validate()?;
            if attack.kind == AttackKind::Dos && attack.window[0] <= 0.0 {
                return Err(Error::config(
                    "a denial-of-service window must start after the first sample \
                     so a held measurement exists"
                        .to_string(),
                ));
            }
            if let Some(mask) = &attack.gain_mask {
                if mask.len() != StateVector::DIM {
                    return Err(Error::config(format!(
                        "gain_mask must have {} entries, got {}",
                        StateVector::DIM,
                        mask.len()
                    )));
                }
            }
        }
        self.detector_config()?;
        if let Some([a, b]) = self.metrics.rmse_interval {
            if !a.is_finite() || !b.is_finite() || a > b {
                return Err(Error::config(format!(
                    "rmse_interval must be an ordered pair, got [{a}, {b}]"
                )));
            }
        }
        Ok(())
    }

    /// The truth-side fault, expanded to a full parameter set.
    pub fn param_fault(&self) -> Option<ParamFault> {
        self.fault.as_ref().map(|f| ParamFault {
            fault_time: f.fault_time,
            faulted_params: f.faulted_params(&self.machine),
        })
    }

    /// Resolved detector thresholds for this config.
    pub fn detector_config(&self) -> Result<DetectorConfig> {
        let d = &self.detector;
        match d.chi2_threshold {
            Some(threshold) => {
                let cfg = DetectorConfig {
                    chi2_threshold: threshold,
                    euclid_threshold: d.euclid_threshold,
                    euclid_window: d.euclid_window,
                };
                cfg.validate()?;
                Ok(cfg)
            }
            None => DetectorConfig::from_alpha(d.alpha, 1, d.euclid_threshold, d.euclid_window),
        }
    }

    /// The attack spec, when one is configured and actually does something.
    pub fn active_attack(&self) -> Option<&AttackSpec> {
        self.attack.as_ref().filter(|a| a.kind != AttackKind::None)
    }

    /// Interval used for RMSE-style metrics (see [`MetricsSection`]).
    pub fn effective_rmse_interval(&self) -> [f64; 2] {
        if let Some(interval) = self.metrics.rmse_interval {
            return interval;
        }
        if let Some(attack) = self.active_attack() {
            return [attack.window[0].max(0.0), attack.window[1].min(self.horizon)];
        }
        if let Some(fault) = &self.fault {
            return [fault.fault_time.min(self.horizon), self.horizon];
        }
        [0.0, self.horizon]
    }

    /// Number of integration steps (the trace has one more row).
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Seed for Monte-Carlo run `run` under base seed `base`: a fixed odd
/// stride keeps the per-run noise streams disjoint and reproducible.
pub fn monte_carlo_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64 * 10007)
}

/// Detector outcomes and error summaries of a single run for one filter.
/// Latencies and duty cycles refer to the attack window and are absent for
/// attack-free configs; the false-alarm rate counts χ² alarms strictly
/// before the attack starts (everywhere, if there is no attack).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub kind: FilterKind,
    /// Per-state root-mean-square error over the metrics interval.
    pub rmse: [f64; 4],
    /// Rotor-angle RMSE with the error wrapped to (−π, π]. The torque
    /// measurement is periodic in δ, so under heavy noise an estimate can
    /// latch a whole electrical turn away from the truth while remaining
    /// consistent with every observation; this metric scores only the
    /// observable part of the angle error.
    pub rmse_delta_wrapped: f64,
    /// Time-averaged error norm ‖x̂ − x‖ over the metrics interval.
    pub mean_err_norm: f64,
    /// Time-averaged χ² statistic outside attack windows, after a 1 s
    /// transient.
    pub mean_g: Option<f64>,
    pub chi2_false_alarm_rate: Option<f64>,
    /// First χ² alarm at or after the attack onset (first alarm overall
    /// when no attack is configured).
    pub chi2_first_alarm: Option<f64>,
    pub euclid_first_alarm: Option<f64>,
    /// First-alarm time minus attack onset.
    pub chi2_latency: Option<f64>,
    pub euclid_latency: Option<f64>,
    /// Fraction of attack-window samples with the alarm raised.
    pub chi2_duty: Option<f64>,
    pub euclid_duty: Option<f64>,
}

/// All per-filter metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub rmse_interval: [f64; 2],
    pub attack_window: Option<[f64; 2]>,
    pub filters: Vec<FilterMetrics>,
}

impl RunMetrics {
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterMetrics> {
        self.filters.iter().find(|f| f.kind == kind)
    }
}

/// Run one scenario with the seed from its `[noise]` section.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(ScenarioTrace, RunMetrics)> {
    run_scenario_with_seed(config, config.noise.seed)
}

/// Run one scenario with an explicit seed (the Monte-Carlo entry point).
pub fn run_scenario_with_seed(
    config: &ScenarioConfig,
    seed: u64,
) -> Result<(ScenarioTrace, RunMetrics)> {
    config.validate()?;
    let dt = config.dt;
    let nominal = config.machine;
    let fault = config.param_fault();
    let truth_params = |t: f64| match &fault {
        Some(f) => machine::apply_fault(nominal, f, t),
        None => nominal,
    };

    // The truth draws from the actual noise level; the filters always
    // assume the `q_std`/`r_std` covariances, which may deliberately differ
    // (robust tuning, noise-mismatch studies). The process density becomes a
    // per-step deviation via √dt.
    let truth_noise = NoiseSpec::from_stddevs(
        config.noise.truth_q_std.unwrap_or(config.noise.q_std) * dt.sqrt(),
        config.noise.truth_r_std.unwrap_or(config.noise.r_std),
        seed,
    );
    let mut process_noise = truth_noise.process_sampler()?;
    let mut meas_noise = truth_noise.measurement_sampler()?;
    let filter_noise =
        NoiseSpec::from_stddevs(config.noise.q_std * dt.sqrt(), config.noise.r_std, seed);

    let plant = machine::smib_plant(nominal, dt);
    let p0 = DMatrix::from_diagonal(&DVector::from_row_slice(&config.initial.p0_diag));
    let x0_est = DVector::from_row_slice(&config.initial.x_est);
    let mut estimators = Vec::new();
    let mut detectors = Vec::new();
    let detector_config = config.detector_config()?;
    for kind in FilterKind::ALL {
        if config.filters.contains(&kind) {
            estimators.push(Estimator::new(
                kind,
                x0_est.clone(),
                p0.clone(),
                filter_noise.q_cov.clone(),
                filter_noise.r_cov.clone(),
            )?);
            detectors.push(ResidualDetector::new(detector_config)?);
        }
    }
    let mut injector = AttackInjector::new(config.attack.clone().unwrap_or_else(AttackSpec::none))?;

    let mut trace = ScenarioTrace::new(&config.filters);
    let mut x_true = StateVector::from_array(config.initial.x_true);

    // Row 0 records the initial condition plus a measurement that no filter
    // consumes (the first update happens after the first prediction step).
    let y0 = machine::measure(x_true, &truth_params(0.0)) + meas_noise.sample()[0];
    let rec0 = injector.process(0.0, y0)?;
    trace.t.push(0.0);
    trace.true_states.push(x_true);
    trace.y_clean.push(rec0.clean);
    trace.y_attacked.push(rec0.attacked);
    for f in trace.filters.iter_mut() {
        f.estimates.push(StateVector::from_array(config.initial.x_est));
        f.g_chi2.push(f64::NAN);
        f.d_euclid.push(f64::NAN);
        f.chi2_alarm.push(false);
        f.euclid_alarm.push(false);
    }

    for k in 1..=config.steps() {
        let t_prev = (k - 1) as f64 * dt;
        let t = k as f64 * dt;
        let u_prev = config.inputs.at(t_prev);

        x_true = machine::step_discrete(x_true, u_prev, &truth_params(t_prev), dt)
            .map_err(|e| e.with_step(k))?
            + StateVector::from_vector(&process_noise.sample());
        if !x_true.is_finite() {
            return Err(Error::numerical_at("true state became non-finite", k));
        }
        let y_clean = machine::measure(x_true, &truth_params(t)) + meas_noise.sample()[0];
        let record = injector.process(t, y_clean).map_err(|e| e.with_step(k))?;
        let y = DVector::from_element(1, record.attacked);
        let gain_mask = injector.gain_mask_at(t);

        trace.t.push(t);
        trace.true_states.push(x_true);
        trace.y_clean.push(record.clean);
        trace.y_attacked.push(record.attacked);

        let u_prev_vec = u_prev.to_vector();
        let u_now_vec = config.inputs.at(t).to_vector();
        for ((est, det), f) in estimators
            .iter_mut()
            .zip(detectors.iter_mut())
            .zip(trace.filters.iter_mut())
        {
            est.predict(&plant, &u_prev_vec).map_err(|e| e.with_step(k))?;
            let artifacts = est
                .update(&plant, &u_now_vec, &y, gain_mask.as_ref())
                .map_err(|e| e.with_step(k))?;
            est.belief().validate().map_err(|e| e.with_step(k))?;
            let verdict = det.assess(t, &y, &artifacts).map_err(|e| e.with_step(k))?;
            f.estimates.push(StateVector::from_vector(est.mean()));
            f.g_chi2.push(verdict.g_chi2);
            f.d_euclid.push(verdict.d_euclid);
            f.chi2_alarm.push(verdict.chi2_alarm);
            f.euclid_alarm.push(verdict.euclid_alarm);
        }
    }

    let metrics = compute_metrics(config, seed, &trace);
    Ok((trace, metrics))
}

/// Map an angle difference into (−π, π].
pub fn wrap_angle(e: f64) -> f64 {
    use std::f64::consts::PI;
    let wrapped = (-e + PI).rem_euclid(2.0 * PI);
    PI - wrapped
}

fn compute_metrics(config: &ScenarioConfig, seed: u64, trace: &ScenarioTrace) -> RunMetrics {
    let interval = config.effective_rmse_interval();
    let attack = config.active_attack();
    let window = attack.map(|a| [a.window[0].max(0.0), a.window[1].min(config.horizon)]);
    let onset = window.map(|w| w[0]);
    let rows = trace.rows();
    let in_interval: Vec<usize> = (0..rows)
        .filter(|&i| trace.t[i] >= interval[0] && trace.t[i] <= interval[1])
        .collect();

    let mut filters = Vec::new();
    for f in &trace.filters {
        let mut sq = [0.0; 4];
        let mut sq_wrapped = 0.0;
        let mut err_norm_sum = 0.0;
        for &i in &in_interval {
            let e = (f.estimates[i] - trace.true_states[i]).to_array();
            for (acc, v) in sq.iter_mut().zip(&e) {
                *acc += v * v;
            }
            let wrapped = wrap_angle(e[0]);
            sq_wrapped += wrapped * wrapped;
            err_norm_sum += e.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let n = in_interval.len().max(1) as f64;
        let rmse = sq.map(|s| (s / n).sqrt());
        let rmse_delta_wrapped = (sq_wrapped / n).sqrt();
        let mean_err_norm = err_norm_sum / n;

        let first_alarm = |alarms: &[bool]| {
            (1..rows)
                .find(|&i| alarms[i] && onset.is_none_or(|o| trace.t[i] >= o))
                .map(|i| trace.t[i])
        };
        let chi2_first_alarm = first_alarm(&f.chi2_alarm);
        let euclid_first_alarm = first_alarm(&f.euclid_alarm);
        let latency = |first: Option<f64>| onset.and_then(|o| first.map(|t| t - o));

        let mut active_n = 0usize;
        let mut chi2_hits = 0usize;
        let mut euclid_hits = 0usize;
        let mut quiet_n = 0usize;
        let mut false_alarms = 0usize;
        let mut g_sum = 0.0;
        let mut g_n = 0usize;
        for i in 1..rows {
            let t = trace.t[i];
            if attack.is_some_and(|a| a.active_at(t)) {
                active_n += 1;
                chi2_hits += usize::from(f.chi2_alarm[i]);
                euclid_hits += usize::from(f.euclid_alarm[i]);
            } else {
                if onset.is_none_or(|o| t < o) {
                    quiet_n += 1;
                    false_alarms += usize::from(f.chi2_alarm[i]);
                }
                if t >= 1.0 {
                    g_sum += f.g_chi2[i];
                    g_n += 1;
                }
            }
        }
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);

        filters.push(FilterMetrics {
            kind: f.kind,
            rmse,
            rmse_delta_wrapped,
            mean_err_norm,
            mean_g: (g_n > 0).then(|| g_sum / g_n as f64),
            chi2_false_alarm_rate: ratio(false_alarms, quiet_n),
            chi2_first_alarm,
            euclid_first_alarm,
            chi2_latency: latency(chi2_first_alarm),
            euclid_latency: latency(euclid_first_alarm),
            chi2_duty: ratio(chi2_hits, active_n),
            euclid_duty: ratio(euclid_hits, active_n),
        });
    }

    RunMetrics {
        seed,
        rmse_interval: interval,
        attack_window: window,
        filters,
    }
}

/// Cross-run aggregate for one filter: means with 95% normal-approximation
/// confidence half-widths, medians, and detection counts. Latency medians
/// are taken over the runs that detected at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterAggregate {
    pub kind: FilterKind,
    pub rmse_mean: [f64; 4],
    pub rmse_ci95: [f64; 4],
    pub mean_err_norm_mean: f64,
    pub mean_err_norm_ci95: f64,
    pub mean_err_norm_median: f64,
    pub mean_g_mean: Option<f64>,
    pub chi2_false_alarm_rate_mean: Option<f64>,
    pub chi2_detected_runs: usize,
    pub euclid_detected_runs: usize,
    pub chi2_latency_median: Option<f64>,
    pub euclid_latency_median: Option<f64>,
    pub chi2_duty_median: Option<f64>,
    pub euclid_duty_median: Option<f64>,
}

/// Everything a Monte-Carlo batch produces: the per-run metrics in seed
/// order plus per-filter aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs: usize,
    pub base_seed: u64,
    pub aggregate: Vec<FilterAggregate>,
    pub per_run: Vec<RunMetrics>,
}

impl MonteCarloSummary {
    pub fn aggregate_for(&self, kind: FilterKind) -> Option<&FilterAggregate> {
        self.aggregate.iter().find(|a| a.kind == kind)
    }
}

/// Run `monte_carlo_runs` independent repetitions (seed schedule
/// `base + i·10007`) and aggregate. Runs execute in parallel when the
/// `parallel` feature is on; results are ordered by run index either way.
pub fn run_monte_carlo(config: &ScenarioConfig) -> Result<MonteCarloSummary> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.monte_carlo_runs)
        .map(|i| monte_carlo_seed(config.noise.seed, i))
        .collect();
    let per_run = run_batch(config, &seeds)?;
    let aggregate = aggregate_metrics(config, &per_run);
    Ok(MonteCarloSummary {
        runs: per_run.len(),
        base_seed: config.noise.seed,
        aggregate,
        per_run,
    })
}

#[cfg(feature = "parallel")]
fn run_batch(config: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<RunMetrics>> {
    use rayon::prelude::*;
    seeds
        .par_iter()
        .map(|&s| run_scenario_with_seed(config, s).map(|(_, m)| m))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_batch(config: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<RunMetrics>> {
    seeds
        .iter()
        .map(|&s| run_scenario_with_seed(config, s).map(|(_, m)| m))
        .collect()
}

fn aggregate_metrics(config: &ScenarioConfig, per_run: &[RunMetrics]) -> Vec<FilterAggregate> {
    let mut out = Vec::new();
    for kind in FilterKind::ALL {
        if !config.filters.contains(&kind) {
            continue;
        }
        let runs: Vec<&FilterMetrics> =
            per_run.iter().filter_map(|r| r.filter(kind)).collect();
        if runs.is_empty() {
            continue;
        }
        let column = |pick: &dyn Fn(&FilterMetrics) -> f64| -> Vec<f64> {
            runs.iter().map(|m| pick(m)).collect()
        };
        let option_column = |pick: &dyn Fn(&FilterMetrics) -> Option<f64>| -> Vec<f64> {
            runs.iter().filter_map(|m| pick(m)).collect()
        };
        let some_median = |values: Vec<f64>| (!values.is_empty()).then(|| stats::median(&values));
        let some_mean = |values: Vec<f64>| (!values.is_empty()).then(|| stats::mean(&values));

        let mut rmse_mean = [0.0; 4];
        let mut rmse_ci95 = [0.0; 4];
        for s in 0..4 {
            let vals = column(&|m: &FilterMetrics| m.rmse[s]);
            rmse_mean[s] = stats::mean(&vals);
            rmse_ci95[s] = stats::ci95_half_width(&vals);
        }
        let err_norms = column(&|m: &FilterMetrics| m.mean_err_norm);
        let chi2_latencies = option_column(&|m: &FilterMetrics| m.chi2_latency);
        let euclid_latencies = option_column(&|m: &FilterMetrics| m.euclid_latency);

        out.push(FilterAggregate {
            kind,
            rmse_mean,
            rmse_ci95,
            mean_err_norm_mean: stats::mean(&err_norms),
            mean_err_norm_ci95: stats::ci95_half_width(&err_norms),
            mean_err_norm_median: stats::median(&err_norms),
            mean_g_mean: some_mean(option_column(&|m: &FilterMetrics| m.mean_g)),
            chi2_false_alarm_rate_mean: some_mean(option_column(&|m: &FilterMetrics| {
                m.chi2_false_alarm_rate
            })),
            chi2_detected_runs: chi2_latencies.len(),
            euclid_detected_runs: euclid_latencies.len(),
            chi2_latency_median: some_median(chi2_latencies),
            euclid_latency_median: some_median(euclid_latencies),
            chi2_duty_median: some_median(option_column(&|m: &FilterMetrics| m.chi2_duty)),
            euclid_duty_median: some_median(option_column(&|m: &FilterMetrics| m.euclid_duty)),
        });
    }
    out
}

/// Empirical boundedness check of one filter's squared estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub kind: FilterKind,
    /// Averaging window (samples) for the mean squared error.
    pub window: usize,
    /// Start of the post-transient region that was examined.
    pub settle_time: f64,
    pub sup_windowed_mse: f64,
    /// Median of the windowed MSE over the earlier half of the
    /// post-transient region.
    pub first_half_level: f64,
    /// Median over the later half.
    pub second_half_level: f64,
    /// Every windowed value is finite.
    pub bounded: bool,
    /// The later half's level does not exceed the earlier half's by more
    /// than 25%.
    pub non_increasing: bool,
}

impl BoundednessReport {
    /// Bounded and settled: the empirical stand-in for mean-square
    /// stability.
    pub fn is_stable(&self) -> bool {
        self.bounded && self.non_increasing
    }
}

/// Ratio by which the later half's windowed-MSE level may exceed the earlier
/// one's in [`bound_monitor`] before the run counts as growing.
pub const NON_INCREASING_SLACK: f64 = 5.0;

/// Slide a `window`-sample mean over the squared error norm of one filter,
/// starting at `settle_time`, and compare the two halves of the windowed
/// series by their medians: stability in the mean-square sense shows up as
/// the later half's level staying within a fixed factor of the earlier
/// one's. The slack is generous ([`NON_INCREASING_SLACK`]) because the
/// error of a lightly damped machine is a slowly mixing process — its level
/// wanders by factors of two or three within a run even when perfectly
/// stationary — while genuine divergence (a pole slip, an exploding
/// covariance) separates the halves by orders of magnitude.
pub fn bound_monitor(
    trace: &ScenarioTrace,
    kind: FilterKind,
    window: usize,
    settle_time: f64,
) -> Result<BoundednessReport> {
    if window == 0 {
        return Err(Error::config("bound monitor window must be at least 1".to_string()));
    }
    let filter = trace
        .filter(kind)
        .ok_or_else(|| Error::config(format!("trace has no {kind} data")))?;
    let sq_err: Vec<f64> = (0..trace.rows())
        .filter(|&i| trace.t[i] >= settle_time)
        .map(|i| {
            let e = (filter.estimates[i] - trace.true_states[i]).to_array();
            e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64
        })
        .collect();
    if sq_err.len() < 2 * window {
        return Err(Error::config(format!(
            "only {} samples after t = {settle_time}, need at least {}",
            sq_err.len(),
            2 * window
        )));
    }
    let windowed: Vec<f64> = sq_err
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    // A non-finite mean poisons the median ordering, so level it manually.
    let level_of = |s: &[f64]| {
        if s.iter().all(|v| v.is_finite()) {
            stats::median(s)
        } else {
            f64::INFINITY
        }
    };
    let mid = windowed.len() / 2;
    let first_half_level = level_of(&windowed[..mid]);
    let second_half_level = level_of(&windowed[mid..]);
    let sup = windowed.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(BoundednessReport {
        kind,
        window,
        settle_time,
        sup_windowed_mse: sup,
        first_half_level,
        second_half_level,
        bounded: windowed.iter().all(|v| v.is_finite()),
        non_increasing: second_half_level <= NON_INCREASING_SLACK * first_half_level,
    })
}

/// When the run should have settled: one second after the last scheduled
/// disturbance event. Events are the exciter step, the parameter fault, the
/// attack onset, and — when the attack ends before the horizon — the
/// recovery shock at the window end (an attack running to the end of the
/// horizon is a persistent condition, not a terminal transient).
pub fn settle_time_for(config: &ScenarioConfig) -> f64 {
    let mut last_event: f64 = 0.0;
    let inputs = &config.inputs;
    if inputs.e_fd_final != inputs.e_fd_initial && inputs.e_fd_step_time <= config.horizon {
        last_event = last_event.max(inputs.e_fd_step_time);
    }
    if let Some(fault) = &config.fault {
        if fault.fault_time <= config.horizon {
            last_event = last_event.max(fault.fault_time);
        }
    }
    if let Some(attack) = config.active_attack() {
        if attack.window[0] <= config.horizon {
            last_event = last_event.max(attack.window[0]);
        }
        if attack.window[1] < config.horizon {
            last_event = last_event.max(attack.window[1]);
        }
    }
    last_event + 1.0
}

/// Derive the Euclidean alarm threshold for a config by pooling the
/// detector's `d` statistic over `runs` attack-free repetitions (seed
/// schedule as in [`run_monte_carlo`]) across every selected filter.
/// Samples before `transient_skip` are discarded so the initial convergence
/// of a wide-open belief does not inflate the threshold. Refuses configs
/// with an attack enabled.
pub fn calibrate_from_config(
    config: &ScenarioConfig,
    runs: usize,
    transient_skip: f64,
) -> Result<f64> {
    if config.active_attack().is_some() {
        return Err(Error::config(
            "calibration runs must be attack-free; remove the [attack] table".to_string(),
        ));
    }
    config.validate()?;
    let mut pools: Vec<Vec<f64>> = Vec::new();
    for run in 0..runs {
        let seed = monte_carlo_seed(config.noise.seed, run);
        let (trace, _) = run_scenario_with_seed(config, seed)?;
        for f in &trace.filters {
            pools.push(collect_post_transient(&trace.t, &f.d_euclid, transient_skip));
        }
    }
    calibrate_euclid_threshold(&pools)
}

fn collect_post_transient(t: &[f64], d: &[f64], transient_skip: f64) -> Vec<f64> {
    t.iter()
        .zip(d)
        .filter(|&(t, d)| *t >= transient_skip && d.is_finite())
        .map(|(_, d)| *d)
        .collect()
}
