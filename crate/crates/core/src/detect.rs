//! Residual-based anomaly detectors over the filter innovation stream: a χ²
//! test on the covariance-normalized innovation and a windowed Euclidean
//! distance on the raw residuals.
//!
//! The two detectors deliberately see the innovation differently. The χ²
//! statistic divides by the filter's own innovation covariance, so a filter
//! whose covariance has been inflated (for instance by a tampered gain that
//! stops the covariance from contracting) can stay silent. The Euclidean
//! detector ignores covariances entirely and reacts to raw residual energy,
//! which is what lets it catch gain-tampering false-data-injection attacks
//! the χ² test misses.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::filters::UpdateArtifacts;

/// Detector thresholds and window length for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Alarm level for the χ² statistic.
    pub chi2_threshold: f64,
    /// Alarm level for the windowed Euclidean statistic.
    pub euclid_threshold: f64,
    /// Sliding-window length (samples) for the Euclidean statistic.
    pub euclid_window: usize,
}

impl DetectorConfig {
    /// Build with the χ² threshold derived from a significance level:
    /// the `(1 − alpha)` quantile with `dof` degrees of freedom.
    pub fn from_alpha(
        alpha: f64,
        dof: usize,
        euclid_threshold: f64,
        euclid_window: usize,
    ) -> Result<Self> {
        let cfg = Self {
            chi2_threshold: chi2_threshold_for(dof, alpha)?,
            euclid_threshold,
            euclid_window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi2_threshold > 0.0) {
            return Err(Error::config(format!(
                "chi2_threshold must be positive, got {}",
                self.chi2_threshold
            )));
        }
        if !(self.euclid_threshold > 0.0) {
            return Err(Error::config(format!(
                "euclid_threshold must be positive, got {}",
                self.euclid_threshold
            )));
        }
        if self.euclid_window == 0 {
            return Err(Error::config("euclid_window must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Per-sample detector outputs for one filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorVerdict {
    pub t: f64,
    /// χ² statistic `g = zᵀ·B·z` with `B` the innovation covariance inverse.
    pub g_chi2: f64,
    /// Windowed Euclidean statistic `d = √(Σ residual²)`.
    pub d_euclid: f64,
    pub chi2_alarm: bool,
    pub euclid_alarm: bool,
}

/// Innovation `z = y − ŷ`, componentwise.
pub fn residual(measured: &DVector<f64>, predicted_meas: &DVector<f64>) -> DVector<f64> {
    measured - predicted_meas
}

/// Normalized innovation energy `g = zᵀ·innovation_cov⁻¹·z`; distributed
/// χ²(dim z) when the filter model matches reality.
pub fn chi2_statistic(z: &DVector<f64>, innovation_cov: &DMatrix<f64>) -> Result<f64> {
    let inv = crate::linalg::spd_inverse(innovation_cov, "innovation covariance")?;
    Ok((z.transpose() * inv * z)[(0, 0)])
}

/// The `(1 − alpha)` quantile of the χ² distribution with `dof` degrees of
/// freedom — the standard table lookup for the detector threshold.
pub fn chi2_threshold_for(dof: usize, alpha: f64) -> Result<f64> {
    if dof < 1 {
        return Err(Error::config("chi-square dof must be at least 1".to_string()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::config(format!("invalid chi-square dof {dof}: {e}")))?;
    let p = 1.0 - alpha;
    let q = dist.inverse_cdf(p);
    if q.is_finite() {
        return Ok(q);
    }
    // The library's inverse CDF gives up in the deep lower tail (large
    // alpha); its CDF is still sound there, so invert it by bisection.
    let mut hi = 1.0;
    while dist.cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Euclidean residual norm over an explicit slice: `√(Σ rᵢ²)`.
pub fn euclidean_statistic(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
}

/// Sliding window over recent residual magnitudes feeding
/// [`euclidean_statistic`]. Partially filled windows are evaluated as-is, so
/// the first sample yields `d = |residual|`.
#[derive(Debug, Clone)]
pub struct EuclideanWindow {
    buf: VecDeque<f64>,
    capacity: usize,
    sum_sq: f64,
}

impl EuclideanWindow {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "euclidean window must hold at least 1 sample");
        Self {
            buf: VecDeque::with_capacity(window),
            capacity: window,
            sum_sq: 0.0,
        }
    }

    /// Insert the newest residual (evicting the oldest once full) and return
    /// the current statistic.
    pub fn push(&mut self, residual: f64) -> f64 {
        if self.buf.len() == self.capacity {
            let old = self.buf.pop_front().expect("non-empty at capacity");
            self.sum_sq -= old * old;
        }
        self.buf.push_back(residual);
        self.sum_sq += residual * residual;
        self.statistic()
    }

    /// Current statistic; 0 before any sample has arrived.
    pub fn statistic(&self) -> f64 {
        // Recompute when cancellation could have degraded the running sum.
        if self.sum_sq < 0.0 {
            return euclidean_statistic(self.buf.as_slices().0)
                .hypot(euclidean_statistic(self.buf.as_slices().1));
        }
        self.sum_sq.sqrt()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Both detectors for one filter: stateless χ² plus the Euclidean window.
pub struct ResidualDetector {
    config: DetectorConfig,
    window: EuclideanWindow,
}

impl ResidualDetector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window: EuclideanWindow::new(config.euclid_window),
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Score one measurement against the filter's update artifacts.
    pub fn assess(
        &mut self,
        t: f64,
        measured: &DVector<f64>,
        artifacts: &UpdateArtifacts,
    ) -> Result<DetectorVerdict> {
        let z = residual(measured, &artifacts.predicted_meas);
        let g_chi2 = chi2_statistic(&z, &artifacts.innovation_cov)?;
        let d_euclid = self.window.push(z.norm());
        Ok(DetectorVerdict {
            t,
            g_chi2,
            d_euclid,
            chi2_alarm: g_chi2 > self.config.chi2_threshold,
            euclid_alarm: d_euclid > self.config.euclid_threshold,
        })
    }
}

/// Derive the Euclidean alarm threshold from attack-free runs: the 99.9th
/// percentile (nearest rank) of every recorded `d` value across all runs,
/// times a 1.2 safety factor. At least 20 runs are required for the
/// percentile to mean anything.
///
/// Callers are expected to exclude the initial filter-convergence transient
/// from the supplied series; with a wide-open initial covariance the first
/// second of residuals would otherwise dominate the percentile.
pub fn calibrate_euclid_threshold(attack_free_runs: &[Vec<f64>]) -> Result<f64> {
    if attack_free_runs.len() < 20 {
        return Err(Error::config(format!(
            "euclidean calibration needs at least 20 attack-free runs, got {}",
            attack_free_runs.len()
        )));
    }
    let mut pooled: Vec<f64> = attack_free_runs
        .iter()
        .flatten()
        .copied()
        .filter(|d| d.is_finite())
        .collect();
    if pooled.is_empty() {
        return Err(Error::config(
            "euclidean calibration received no finite statistics".to_string(),
        ));
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let rank = ((0.999 * pooled.len() as f64).ceil() as usize).clamp(1, pooled.len());
    Ok(pooled[rank - 1] * 1.2)
}
