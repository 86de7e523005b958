//! Measurement-channel attack models: a sinusoidal random-signal attack, a
//! denial-of-service hold, a replay of stale samples, and false data
//! injection (measurement bias plus optional Kalman-gain tampering).
//!
//! Attacks only ever touch the measurement stream and the filter gain —
//! never the true plant state or the noise draws. Outside its active window
//! every attack is the identity, bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::filters::scale_gain_rows;

/// The supported attack families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    /// No attack; the injector passes measurements through untouched.
    #[default]
    None,
    /// Additive sinusoid `amplitude·sin(2π·frequency·t)` on the measurement.
    Random,
    /// Denial of service: the measurement freezes at the last pre-window
    /// sample for the whole window.
    Dos,
    /// Replay of the clean measurement recorded `delay` seconds earlier.
    Replay,
    /// False data injection: constant measurement bias `amplitude`, plus an
    /// optional per-state gain mask; `cancel_and_replace` switches to the
    /// full substitution form where the attacked value IS `amplitude`.
    Fdi,
}

/// Full description of one attack, mapping 1:1 to the `[attack]` config
/// table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Active interval `[t_start, t_end]` in seconds, closed on both ends.
    /// Defaults to "always active".
    pub window: [f64; 2],
    /// Sine amplitude (random), injected bias or replacement value (fdi).
    pub amplitude: f64,
    /// Sine frequency in Hz (random).
    pub frequency: f64,
    /// Replay lag in seconds.
    pub delay: f64,
    /// Per-state scale applied to the Kalman gain while an FDI attack is
    /// active (`diag(mask)·K`).
    pub gain_mask: Option<Vec<f64>>,
    /// Upper bound on `|amplitude|` the attacker is assumed to respect;
    /// enforced at validation time.
    pub amplitude_bound: Option<f64>,
    /// FDI substitution mode: the attacked measurement becomes `amplitude`
    /// itself instead of `clean + amplitude`.
    pub cancel_and_replace: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            window: [0.0, f64::INFINITY],
            amplitude: 0.0,
            frequency: 0.0,
            delay: 0.0,
            gain_mask: None,
            amplitude_bound: None,
            cancel_and_replace: false,
        }
    }
}

impl AttackSpec {
    /// A spec that never modifies anything.
    pub fn none() -> Self {
        Self::default()
    }

    /// Whether the attack is operating at time `t` (closed window, and the
    /// `none` kind is never active).
    pub fn active_at(&self, t: f64) -> bool {
        self.kind != AttackKind::None && t >= self.window[0] && t <= self.window[1]
    }

    pub fn validate(&self) -> Result<()> {
        let [t0, t1] = self.window;
        if t0.is_nan() || t1.is_nan() || t0 > t1 {
            return Err(Error::config(format!(
                "attack window [{t0}, {t1}] must satisfy t_start <= t_end"
            )));
        }
        if self.kind == AttackKind::Replay && !(self.delay > 0.0) {
            return Err(Error::config(format!(
                "replay attack needs a positive delay, got {}",
                self.delay
            )));
        }
        if let Some(bound) = self.amplitude_bound {
            if self.amplitude.abs() > bound {
                return Err(Error::config(format!(
                    "attack amplitude {} exceeds the configured bound {bound}",
                    self.amplitude
                )));
            }
        }
        if let Some(mask) = &self.gain_mask {
            if mask.is_empty() || mask.iter().any(|m| !m.is_finite()) {
                return Err(Error::config(
                    "gain mask must be a non-empty list of finite scales".to_string(),
                ));
            }
            if self.kind != AttackKind::Fdi {
                return Err(Error::config(
                    "gain_mask is only meaningful for the fdi attack".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// One processed measurement: the clean value, what the estimator actually
/// received, and whether an attack was operating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub t: f64,
    pub clean: f64,
    pub attacked: f64,
    pub attack_active: bool,
}

/// Additive sinusoid inside the window: `clean + A·sin(2π·f·t)`.
pub fn random_attack(clean: f64, t: f64, spec: &AttackSpec) -> f64 {
    if spec.active_at(t) {
        clean + spec.amplitude * (TAU * spec.frequency * t).sin()
    } else {
        clean
    }
}

/// Denial-of-service hold: inside the window, return the clean sample
/// recorded at the last step strictly before the window start.
///
/// `history` must contain `(t, clean)` pairs in increasing time order with
/// the current sample already appended (that is what the injector maintains).
pub fn dos_attack(history: &[(f64, f64)], t: f64, spec: &AttackSpec) -> Result<f64> {
    let current = current_sample(history, t);
    if !spec.active_at(t) {
        return Ok(current);
    }
    let before_window = history.partition_point(|&(ht, _)| ht < spec.window[0]);
    if before_window == 0 {
        return Err(Error::config(format!(
            "DoS window starts at {}s but no earlier measurement exists to hold",
            spec.window[0]
        )));
    }
    Ok(history[before_window - 1].1)
}

/// Replay: inside the window, return the clean sample recorded at (or
/// nearest before) `t − delay`. When the history does not reach back that
/// far, the earliest recorded sample is used and a warning logged.
pub fn replay_attack(history: &[(f64, f64)], t: f64, spec: &AttackSpec) -> f64 {
    let current = current_sample(history, t);
    if !spec.active_at(t) {
        return current;
    }
    // The nanosecond of slack keeps `t − delay` from slipping just below the
    // recorded timestamp it is meant to hit when the subtraction rounds down.
    let target = t - spec.delay + 1e-9;
    let upto = history.partition_point(|&(ht, _)| ht <= target);
    if upto == 0 {
        log::warn!(
            "replay at t={t:.3}s wants a sample from {target:.3}s, before recording began; \
             clamping to the earliest sample"
        );
        return history[0].1;
    }
    history[upto - 1].1
}

/// False data injection on the measurement: bias `clean + amplitude`, or the
/// substitution form where the attacker replaces the reading with
/// `amplitude` outright.
pub fn fdi_attack(clean: f64, t: f64, spec: &AttackSpec) -> f64 {
    if !spec.active_at(t) {
        return clean;
    }
    if spec.cancel_and_replace {
        spec.amplitude
    } else {
        clean + spec.amplitude
    }
}

/// The FDI gain tampering: rows of the Kalman gain scaled by the spec's
/// mask (`diag(mask)·gain`); identity when the spec carries no mask.
pub fn fdi_gain_mask(gain: &DMatrix<f64>, spec: &AttackSpec) -> Result<DMatrix<f64>> {
    match &spec.gain_mask {
        Some(mask) => scale_gain_rows(gain, &DVector::from_column_slice(mask)),
        None => Ok(gain.clone()),
    }
}

fn current_sample(history: &[(f64, f64)], t: f64) -> f64 {
    let &(last_t, last_y) = history
        .last()
        .expect("attack transform called with empty history");
    debug_assert!(
        (last_t - t).abs() < 1e-9,
        "history must end with the current sample (found t={last_t}, expected {t})"
    );
    last_y
}

/// Stateful per-run attack pipeline: records the clean history and applies
/// the configured transform to each incoming measurement.
pub struct AttackInjector {
    spec: AttackSpec,
    history: Vec<(f64, f64)>,
}

impl AttackInjector {
    pub fn new(spec: AttackSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            history: Vec::new(),
        })
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    /// Record the clean measurement taken at `t` and produce what the
    /// estimators will see.
    pub fn process(&mut self, t: f64, clean: f64) -> Result<MeasurementRecord> {
        if let Some(&(last_t, _)) = self.history.last() {
            if t <= last_t {
                return Err(Error::config(format!(
                    "measurements must arrive in increasing time order ({t} after {last_t})"
                )));
            }
        }
        self.history.push((t, clean));
        let attacked = match self.spec.kind {
            AttackKind::None => clean,
            AttackKind::Random => random_attack(clean, t, &self.spec),
            AttackKind::Dos => dos_attack(&self.history, t, &self.spec)?,
            AttackKind::Replay => replay_attack(&self.history, t, &self.spec),
            AttackKind::Fdi => fdi_attack(clean, t, &self.spec),
        };
        Ok(MeasurementRecord {
            t,
            clean,
            attacked,
            attack_active: self.spec.active_at(t),
        })
    }

    /// The gain mask the estimators must apply at time `t`: present only
    /// while an FDI attack with a configured mask is active.
    pub fn gain_mask_at(&self, t: f64) -> Option<DVector<f64>> {
        if self.spec.kind == AttackKind::Fdi && self.spec.active_at(t) {
            self.spec
                .gain_mask
                .as_ref()
                .map(|m| DVector::from_column_slice(m))
        } else {
            None
        }
    }
}
