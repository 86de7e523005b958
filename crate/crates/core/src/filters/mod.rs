//! The three nonlinear state estimators — extended (EKF), cubature (CKF),
//! and square-root cubature (SCKF) Kalman filters — behind one
//! predict/update interface.
//!
//! All filters consume the same discrete plant maps from
//! [`PlantModel`](crate::machine::PlantModel); they differ only in how they
//! propagate the Gaussian belief. The CKF and SCKF are algebraically the same
//! filter (the SCKF tracks a triangular square-root factor of the covariance
//! instead of the covariance itself), and tests hold them to near-identical
//! trajectories. The measurement update can be run with a per-state gain mask
//! to model false-data-injection attacks that tamper with the Kalman gain.

mod ckf;
mod ekf;
mod sckf;

pub use ckf::{ckf_predict, ckf_update, ckf_update_with};
pub use ekf::{ekf_predict, ekf_update, ekf_update_with};
pub use sckf::{sckf_predict, sckf_update, sckf_update_with};

pub use crate::linalg::{jacobian_fd, tria};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{chol_with_jitter, psd_sqrt};
use crate::machine::PlantModel;

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Ckf,
    Sckf,
}

impl FilterKind {
    /// All filters, in the fixed order used by trace columns and reports.
    pub const ALL: [FilterKind; 3] = [FilterKind::Ekf, FilterKind::Ckf, FilterKind::Sckf];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Ckf => "ckf",
            FilterKind::Sckf => "sckf",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ekf" => Ok(FilterKind::Ekf),
            "ckf" => Ok(FilterKind::Ckf),
            "sckf" => Ok(FilterKind::Sckf),
            other => Err(Error::config(format!(
                "unknown filter '{other}' (expected ekf, ckf, or sckf)"
            ))),
        }
    }
}

/// How a belief's spread is stored: the covariance itself (EKF/CKF) or a
/// lower-triangular square-root factor `S` with `P = S·Sᵀ` (SCKF).
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceRepr {
    Full(DMatrix<f64>),
    SqrtFactor(DMatrix<f64>),
}

/// Gaussian state belief `N(mean, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: CovarianceRepr,
}

impl GaussianBelief {
    /// Belief holding the covariance directly.
    pub fn full(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        debug_assert_eq!(cov.nrows(), cov.ncols());
        Self {
            mean,
            cov: CovarianceRepr::Full(cov),
        }
    }

    /// Belief holding a lower-triangular square-root factor.
    pub fn from_sqrt(mean: DVector<f64>, sqrt_factor: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), sqrt_factor.nrows());
        Self {
            mean,
            cov: CovarianceRepr::SqrtFactor(sqrt_factor),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The covariance matrix, materialized from the factor when needed.
    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.cov {
            CovarianceRepr::Full(p) => p.clone(),
            CovarianceRepr::SqrtFactor(s) => s * s.transpose(),
        }
    }

    /// A lower-triangular factor `S` with `S·Sᵀ = P`; factorizes (with the
    /// jitter retry policy) when the belief stores the full covariance.
    pub fn sqrt_factor(&self) -> Result<DMatrix<f64>> {
        match &self.cov {
            CovarianceRepr::Full(p) => chol_with_jitter(p),
            CovarianceRepr::SqrtFactor(s) => Ok(s.clone()),
        }
    }

    /// Check the belief is usable: finite mean, and a covariance that is
    /// symmetric and positive definite (full form) or a factor with strictly
    /// positive diagonal (square-root form).
    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("belief mean is non-finite"));
        }
        match &self.cov {
            CovarianceRepr::Full(p) => {
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(Error::numerical("covariance has non-finite entries"));
                }
                let scale = p.amax().max(1.0);
                let asym = (p - p.transpose()).amax();
                if asym > 1e-9 * scale {
                    return Err(Error::numerical(format!(
                        "covariance asymmetric by {asym:.3e} (scale {scale:.3e})"
                    )));
                }
                // Same tolerance as `sqrt_factor`: a covariance counts as
                // valid exactly when the filters can factor it.
                let sym = (p + p.transpose()) * 0.5;
                if chol_with_jitter(&sym).is_err() {
                    return Err(Error::numerical(
                        "covariance is not positive definite".to_string(),
                    ));
                }
            }
            CovarianceRepr::SqrtFactor(s) => {
                if !s.iter().all(|v| v.is_finite()) {
                    return Err(Error::numerical("sqrt factor has non-finite entries"));
                }
                for i in 0..s.nrows().min(s.ncols()) {
                    if s[(i, i)] <= 0.0 {
                        return Err(Error::numerical(format!(
                            "sqrt factor diagonal entry {i} is {} (must be > 0)",
                            s[(i, i)]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The canonical third-degree cubature point set for dimension `n`:
/// the `2n` scaled unit directions `±√n·e_i`, each with weight `1/(2n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubatureSet {
    /// One point per column (`n × 2n`).
    pub points: DMatrix<f64>,
    /// Common weight `1/(2n)`.
    pub weight: f64,
}

/// Build the cubature point set for state dimension `n ≥ 1`.
pub fn cubature_points(n: usize) -> CubatureSet {
    assert!(n >= 1, "cubature rule needs dimension >= 1");
    let scale = (n as f64).sqrt();
    let m = 2 * n;
    let mut points = DMatrix::zeros(n, m);
    for i in 0..n {
        points[(i, i)] = scale;
        points[(i, n + i)] = -scale;
    }
    CubatureSet {
        points,
        weight: 1.0 / m as f64,
    }
}

impl CubatureSet {
    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn count(&self) -> usize {
        self.points.ncols()
    }

    /// The points mapped through an affine transform: column `i` becomes
    /// `S·ξ_i + mean`, turning the unit-moment set into samples of
    /// `N(mean, S·Sᵀ)`.
    pub fn points_about(&self, s: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut pts = s * &self.points;
        for mut col in pts.column_iter_mut() {
            col += mean;
        }
        pts
    }
}

/// Intermediate quantities of a measurement update, kept for the residual
/// detectors and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateArtifacts {
    /// Predicted measurement ŷ (ẑ) before seeing the data.
    pub predicted_meas: DVector<f64>,
    /// Innovation covariance: `H·P⁻·Hᵀ + R` for the EKF, `P_zz` for
    /// CKF/SCKF.
    pub innovation_cov: DMatrix<f64>,
    /// State–measurement cross covariance `P_xz` (`P⁻·Hᵀ` for the EKF).
    pub cross_cov: DMatrix<f64>,
    /// The gain actually applied to the innovation. Equals
    /// `cross_cov·innovation_cov⁻¹` unless a gain mask tampered with it.
    pub gain: DMatrix<f64>,
}

/// Scale each row of a gain matrix by the matching mask entry
/// (`diag(mask)·gain`); the false-data-injection attack uses this to cripple
/// selected state channels.
pub fn scale_gain_rows(gain: &DMatrix<f64>, mask: &DVector<f64>) -> Result<DMatrix<f64>> {
    if mask.len() != gain.nrows() {
        return Err(Error::config(format!(
            "gain mask length {} does not match state dimension {}",
            mask.len(),
            gain.nrows()
        )));
    }
    let mut out = gain.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= mask[i];
    }
    Ok(out)
}

pub(crate) fn apply_gain_mask(
    gain: DMatrix<f64>,
    mask: Option<&DVector<f64>>,
) -> Result<DMatrix<f64>> {
    match mask {
        Some(m) => scale_gain_rows(&gain, m),
        None => Ok(gain),
    }
}

/// Apply `func` to every column of `pts`, collecting results column-wise.
pub(crate) fn map_columns(
    pts: &DMatrix<f64>,
    out_dim: usize,
    func: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(out_dim, pts.ncols());
    let mut buf = DVector::zeros(pts.nrows());
    for j in 0..pts.ncols() {
        buf.copy_from(&pts.column(j));
        out.set_column(j, &func(&buf));
    }
    out
}

pub(crate) fn ensure_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("{what} is non-finite")))
    }
}

pub(crate) fn ensure_finite_mat(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("{what} is non-finite")))
    }
}

/// Concatenate matrices side by side (all must share a row count).
pub(crate) fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut offset = 0;
    for block in blocks {
        debug_assert_eq!(block.nrows(), rows);
        out.view_mut((0, offset), (rows, block.ncols()))
            .copy_from(*block);
        offset += block.ncols();
    }
    out
}

/// One estimator instance: a filter kind, its current belief, and the cached
/// noise factors it runs with.
///
/// The free functions ([`ekf_predict`], [`ckf_update`], ...) are the
/// algorithms; this wrapper owns the recursion state so scenario code can
/// drive all three filters uniformly.
pub struct Estimator {
    kind: FilterKind,
    belief: GaussianBelief,
    q_cov: DMatrix<f64>,
    r_cov: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
    joseph_form: bool,
}

impl Estimator {
    /// Build an estimator from the initial belief `N(mean, cov)` and the
    /// noise covariances it will assume at every step. The SCKF converts the
    /// initial covariance to its square-root form here.
    pub fn new(
        kind: FilterKind,
        initial_mean: DVector<f64>,
        initial_cov: DMatrix<f64>,
        q_cov: DMatrix<f64>,
        r_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let q_sqrt = psd_sqrt(&q_cov)
            .map_err(|_| Error::config("process noise covariance is not PSD".to_string()))?;
        let r_sqrt = psd_sqrt(&r_cov)
            .map_err(|_| Error::config("measurement noise covariance is not PSD".to_string()))?;
        let belief = match kind {
            FilterKind::Ekf | FilterKind::Ckf => GaussianBelief::full(initial_mean, initial_cov),
            FilterKind::Sckf => {
                let s = chol_with_jitter(&initial_cov)?;
                GaussianBelief::from_sqrt(initial_mean, s)
            }
        };
        Ok(Self {
            kind,
            belief,
            q_cov,
            r_cov,
            q_sqrt,
            r_sqrt,
            joseph_form: false,
        })
    }

    /// Switch the EKF covariance update to the Joseph form (ignored by the
    /// cubature filters).
    pub fn with_joseph_update(mut self, enabled: bool) -> Self {
        self.joseph_form = enabled;
        self
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.belief.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.belief.covariance()
    }

    /// Time update: push the belief through the plant map under input `u`.
    pub fn predict(&mut self, model: &PlantModel, u: &DVector<f64>) -> Result<()> {
        self.belief = match self.kind {
            FilterKind::Ekf => ekf_predict(&self.belief, model, u, &self.q_cov)?,
            FilterKind::Ckf => ckf_predict(&self.belief, model, u, &self.q_cov)?,
            FilterKind::Sckf => sckf_predict(&self.belief, model, u, &self.q_sqrt)?,
        };
        Ok(())
    }

    /// Measurement update with measurement `y` taken under input `u`.
    /// `gain_mask`, when present, scales the gain rows before it is applied
    /// (the false-data-injection tampering model).
    pub fn update(
        &mut self,
        model: &PlantModel,
        u: &DVector<f64>,
        y: &DVector<f64>,
        gain_mask: Option<&DVector<f64>>,
    ) -> Result<UpdateArtifacts> {
        let (belief, artifacts) = match self.kind {
            FilterKind::Ekf => ekf_update_with(
                &self.belief,
                model,
                u,
                y,
                &self.r_cov,
                gain_mask,
                self.joseph_form,
            )?,
            FilterKind::Ckf => {
                ckf_update_with(&self.belief, model, u, y, &self.r_cov, gain_mask)?
            }
            FilterKind::Sckf => {
                sckf_update_with(&self.belief, model, u, y, &self.r_sqrt, gain_mask)?
            }
        };
        self.belief = belief;
        Ok(artifacts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cubature_points_for_dim_one_are_plus_minus_one() {
        let set = cubature_points(1);
        assert_eq!(set.count(), 2);
        assert_eq!(set.weight, 0.5);
        assert_eq!(set.points[(0, 0)], 1.0);
        assert_eq!(set.points[(0, 1)], -1.0);
    }

    #[test]
    fn cubature_points_for_dim_four_sit_at_twice_the_axes() {
        let set = cubature_points(4);
        assert_eq!(set.count(), 8);
        assert_eq!(set.weight, 0.125);
        for i in 0..4 {
            let mut expected = DVector::zeros(4);
            expected[i] = 2.0;
            assert_eq!(DVector::from(set.points.column(i)), expected);
            assert_eq!(DVector::from(set.points.column(4 + i)), -expected);
        }
        // Zero mean and identity sample covariance.
        let mean = set.points.column_mean();
        assert_abs_diff_eq!(mean, DVector::zeros(4), epsilon = 1e-15);
        let cov = (&set.points * set.points.transpose()) * set.weight;
        assert_abs_diff_eq!(cov, DMatrix::identity(4, 4), epsilon = 1e-15);
    }

    #[test]
    fn cubature_rule_integrates_low_degree_monomials_exactly() {
        // Against N(0, I): odd-degree monomials integrate to 0, x_i² to 1,
        // x_i·x_j (i≠j) to 0. The rule is exact for total degree ≤ 3.
        for n in 1..=6 {
            let set = cubature_points(n);
            let integrate = |f: &dyn Fn(&DVector<f64>) -> f64| -> f64 {
                (0..set.count())
                    .map(|j| f(&DVector::from(set.points.column(j))))
                    .sum::<f64>()
                    * set.weight
            };
            for i in 0..n {
                assert_abs_diff_eq!(integrate(&|x| x[i]), 0.0, epsilon = 1e-10);
                assert_abs_diff_eq!(integrate(&|x| x[i] * x[i]), 1.0, epsilon = 1e-10);
                assert_abs_diff_eq!(integrate(&|x| x[i] * x[i] * x[i]), 0.0, epsilon = 1e-10);
                for j in 0..n {
                    if i != j {
                        assert_abs_diff_eq!(integrate(&|x| x[i] * x[j]), 0.0, epsilon = 1e-10);
                        assert_abs_diff_eq!(
                            integrate(&|x| x[i] * x[i] * x[j]),
                            0.0,
                            epsilon = 1e-10
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn points_about_recenters_and_scales() {
        let set = cubature_points(2);
        let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.3]);
        let mean = DVector::from_column_slice(&[1.0, -2.0]);
        let pts = set.points_about(&s, &mean);
        // Sample mean recovers the center; sample covariance recovers S·Sᵀ.
        assert_abs_diff_eq!(pts.column_mean(), mean, epsilon = 1e-14);
        let mut acc = DMatrix::zeros(2, 2);
        for j in 0..pts.ncols() {
            let d = DVector::from(pts.column(j)) - &mean;
            acc += &d * d.transpose();
        }
        assert_abs_diff_eq!(acc * set.weight, &s * s.transpose(), epsilon = 1e-14);
    }

    #[test]
    fn gain_mask_scales_rows() {
        let gain = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let mask = DVector::from_column_slice(&[0.05, 0.0, 0.0, 0.0]);
        let masked = scale_gain_rows(&gain, &mask).unwrap();
        assert_eq!(
            masked,
            DMatrix::from_row_slice(4, 1, &[0.05, 0.0, 0.0, 0.0])
        );

        let ones = DVector::from_element(4, 1.0);
        assert_eq!(scale_gain_rows(&gain, &ones).unwrap(), gain);
        let zeros = DVector::zeros(4);
        assert_eq!(
            scale_gain_rows(&gain, &zeros).unwrap(),
            DMatrix::zeros(4, 1)
        );

        let short = DVector::zeros(3);
        assert!(matches!(
            scale_gain_rows(&gain, &short),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn filter_kind_parses_and_prints() {
        for kind in FilterKind::ALL {
            assert_eq!(kind.name().parse::<FilterKind>().unwrap(), kind);
        }
        assert_eq!(" CKF ".parse::<FilterKind>().unwrap(), FilterKind::Ckf);
        assert!("ukf".parse::<FilterKind>().is_err());
    }

    #[test]
    fn belief_validation_catches_breakage() {
        let good = GaussianBelief::full(DVector::zeros(2), DMatrix::identity(2, 2));
        good.validate().unwrap();

        let indefinite = GaussianBelief::full(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        );
        assert!(indefinite.validate().is_err());

        let asymmetric = GaussianBelief::full(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        );
        assert!(asymmetric.validate().is_err());

        let nan_mean = GaussianBelief::full(
            DVector::from_column_slice(&[f64::NAN, 0.0]),
            DMatrix::identity(2, 2),
        );
        assert!(nan_mean.validate().is_err());

        let flat_factor = GaussianBelief::from_sqrt(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        );
        assert!(flat_factor.validate().is_err());
    }

    #[test]
    fn sqrt_factor_round_trips_through_covariance() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let belief = GaussianBelief::full(DVector::zeros(2), p.clone());
        let s = belief.sqrt_factor().unwrap();
        assert_abs_diff_eq!(&s * s.transpose(), p, epsilon = 1e-12);

        let sqrt_belief = GaussianBelief::from_sqrt(DVector::zeros(2), s.clone());
        assert_abs_diff_eq!(sqrt_belief.covariance(), p, epsilon = 1e-12);
        assert_eq!(sqrt_belief.sqrt_factor().unwrap(), s);
    }
}
