//! Extended Kalman filter: first-order linearization of the plant maps
//! around the current estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::filters::{
    apply_gain_mask, ensure_finite_mat, ensure_finite_vec, GaussianBelief, UpdateArtifacts,
};
use crate::linalg::spd_inverse;
use crate::machine::PlantModel;

/// Time update: `x̂⁻ = f(x̂, u)`, `P⁻ = F·P·Fᵀ + Q` with `F = ∂f/∂x`
/// evaluated at the prior mean (additive process noise).
pub fn ekf_predict(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    q_cov: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let p = belief.covariance();
    let f_jac = model.jac_f(&belief.mean, u);
    ensure_finite_mat(&f_jac, "state Jacobian")?;
    let mean = model.f(&belief.mean, u);
    ensure_finite_vec(&mean, "predicted mean")?;
    let cov = &f_jac * p * f_jac.transpose() + q_cov;
    Ok(GaussianBelief::full(mean, cov))
}

/// Measurement update per the textbook equations: gain
/// `K = P⁻·Hᵀ·(H·P⁻·Hᵀ + R)⁻¹`, mean correction by `K·(y − h(x̂⁻, u))`,
/// covariance `P⁺ = (I − K·H)·P⁻`.
pub fn ekf_update(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    r_cov: &DMatrix<f64>,
) -> Result<(GaussianBelief, UpdateArtifacts)> {
    ekf_update_with(belief, model, u, y, r_cov, None, false)
}

/// [`ekf_update`] with the attack/robustness knobs exposed: an optional gain
/// mask (rows of `K` scaled before use) and the Joseph-form covariance update
/// `P⁺ = (I−KH)·P⁻·(I−KH)ᵀ + K·R·Kᵀ`, which stays symmetric PSD even with a
/// tampered gain.  A masked update always takes the Joseph form: the short
/// form `(I−KH)·P⁻` is an identity that only holds for the unmasked optimal
/// gain and turns asymmetric the moment the gain is scaled.
pub fn ekf_update_with(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    r_cov: &DMatrix<f64>,
    gain_mask: Option<&DVector<f64>>,
    joseph_form: bool,
) -> Result<(GaussianBelief, UpdateArtifacts)> {
    let p = belief.covariance();
    let h_jac = model.jac_h(&belief.mean, u);
    ensure_finite_mat(&h_jac, "measurement Jacobian")?;
    let predicted = model.h(&belief.mean, u);
    ensure_finite_vec(&predicted, "predicted measurement")?;

    let innovation_cov = &h_jac * &p * h_jac.transpose() + r_cov;
    let s_inv = spd_inverse(&innovation_cov, "innovation covariance")?;
    let cross_cov = &p * h_jac.transpose();
    let gain = apply_gain_mask(&cross_cov * s_inv, gain_mask)?;

    let innovation = y - &predicted;
    let mean = &belief.mean + &gain * innovation;
    ensure_finite_vec(&mean, "updated mean")?;

    let n = belief.dim();
    let i_kh = DMatrix::identity(n, n) - &gain * &h_jac;
    let cov = if joseph_form || gain_mask.is_some() {
        &i_kh * &p * i_kh.transpose() + &gain * r_cov * gain.transpose()
    } else {
        i_kh * &p
    };

    let artifacts = UpdateArtifacts {
        predicted_meas: predicted,
        innovation_cov,
        cross_cov,
        gain,
    };
    Ok((GaussianBelief::full(mean, cov), artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Linear plant x′ = A·x (input ignored), y = C·x.
    fn linear_plant(a: DMatrix<f64>, c: DMatrix<f64>) -> PlantModel {
        let n = a.nrows();
        let p = c.nrows();
        let a_h = a.clone();
        let c_h = c.clone();
        PlantModel::new(n, p, move |x, _| &a_h * x, move |x, _| &c_h * x)
    }

    #[test]
    fn predict_on_linear_plant_matches_exact_propagation() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 0.9]);
        let plant = linear_plant(a.clone(), DMatrix::identity(1, 2));
        let p0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let belief = GaussianBelief::full(DVector::from_column_slice(&[1.0, -1.0]), p0.clone());
        let u = DVector::zeros(1);

        // Q = 0: P⁻ must be exactly A·P·Aᵀ (FD Jacobian of a linear map is
        // the matrix itself to ~1e-9).
        let predicted = ekf_predict(&belief, &plant, &u, &DMatrix::zeros(2, 2)).unwrap();
        assert_abs_diff_eq!(
            predicted.covariance(),
            &a * &p0 * a.transpose(),
            epsilon = 1e-7
        );
        assert_abs_diff_eq!(
            predicted.mean,
            &a * &belief.mean,
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_plant_prediction_adds_process_noise() {
        let plant = linear_plant(DMatrix::identity(3, 3), DMatrix::identity(1, 3));
        let p0 = DMatrix::identity(3, 3) * 0.5;
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.1, 0.2, 0.3]));
        let belief = GaussianBelief::full(DVector::zeros(3), p0.clone());
        let predicted = ekf_predict(&belief, &plant, &DVector::zeros(1), &q).unwrap();
        assert_abs_diff_eq!(predicted.covariance(), p0 + q, epsilon = 1e-7);
    }

    #[test]
    fn scalar_static_case_reproduces_hand_kalman_algebra() {
        // x′ = x, y = x, P = 1, R = 1: K = P/(P+R) = 0.5, P⁺ = (1−K)·P = 0.5,
        // x̂⁺ = x̂ + 0.5·(y − x̂).
        let plant = linear_plant(DMatrix::identity(1, 1), DMatrix::identity(1, 1));
        let belief = GaussianBelief::full(DVector::zeros(1), DMatrix::identity(1, 1));
        let y = DVector::from_element(1, 2.0);
        let (posterior, artifacts) = ekf_update(
            &belief,
            &plant,
            &DVector::zeros(1),
            &y,
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert_abs_diff_eq!(artifacts.gain[(0, 0)], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(posterior.covariance()[(0, 0)], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(posterior.mean[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(artifacts.innovation_cov[(0, 0)], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_measurement_matrix_leaves_belief_unchanged() {
        let plant = linear_plant(DMatrix::identity(2, 2), DMatrix::zeros(1, 2));
        let p0 = DMatrix::identity(2, 2);
        let belief = GaussianBelief::full(DVector::from_column_slice(&[1.0, 2.0]), p0.clone());
        let (posterior, artifacts) = ekf_update(
            &belief,
            &plant,
            &DVector::zeros(1),
            &DVector::from_element(1, 5.0),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert_abs_diff_eq!(artifacts.gain, DMatrix::zeros(2, 1), epsilon = 1e-12);
        assert_abs_diff_eq!(posterior.mean, belief.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(posterior.covariance(), p0, epsilon = 1e-9);
    }

    #[test]
    fn zero_innovation_leaves_mean_unchanged() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let plant = linear_plant(DMatrix::identity(2, 2), c.clone());
        let mean = DVector::from_column_slice(&[0.7, -0.3]);
        let belief = GaussianBelief::full(mean.clone(), DMatrix::identity(2, 2));
        let y = &c * &mean;
        let (posterior, _) = ekf_update(
            &belief,
            &plant,
            &DVector::zeros(1),
            &y,
            &(DMatrix::identity(1, 1) * 0.01),
        )
        .unwrap();
        assert_abs_diff_eq!(posterior.mean, mean, epsilon = 1e-9);
    }

    #[test]
    fn singular_innovation_covariance_is_reported() {
        // R = 0 and H = 0 makes H·P·Hᵀ + R = 0, which cannot be inverted.
        let plant = linear_plant(DMatrix::identity(1, 1), DMatrix::zeros(1, 1));
        let belief = GaussianBelief::full(DVector::zeros(1), DMatrix::identity(1, 1));
        let result = ekf_update(
            &belief,
            &plant,
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DMatrix::zeros(1, 1),
        );
        assert!(matches!(result, Err(crate::Error::Singular { .. })));
    }

    #[test]
    fn joseph_form_matches_simple_form_with_exact_gain() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let plant = linear_plant(DMatrix::identity(2, 2), c);
        let belief = GaussianBelief::full(
            DVector::from_column_slice(&[0.2, 0.4]),
            DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]),
        );
        let y = DVector::from_element(1, 0.1);
        let r = DMatrix::identity(1, 1) * 0.04;
        let u = DVector::zeros(1);
        let (simple, _) = ekf_update(&belief, &plant, &u, &y, &r).unwrap();
        let (joseph, _) = ekf_update_with(&belief, &plant, &u, &y, &r, None, true).unwrap();
        assert_abs_diff_eq!(simple.mean, joseph.mean, epsilon = 1e-10);
        // With the optimal gain the two covariance forms agree analytically.
        assert_abs_diff_eq!(simple.covariance(), joseph.covariance(), epsilon = 1e-7);
    }

    #[test]
    fn gain_mask_zeroes_selected_state_corrections() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let plant = linear_plant(DMatrix::identity(2, 2), c);
        let belief = GaussianBelief::full(DVector::zeros(2), DMatrix::identity(2, 2));
        let y = DVector::from_element(1, 1.0);
        let r = DMatrix::identity(1, 1) * 0.01;
        let mask = DVector::from_column_slice(&[1.0, 0.0]);
        let (posterior, artifacts) = ekf_update_with(
            &belief,
            &plant,
            &DVector::zeros(1),
            &y,
            &r,
            Some(&mask),
            false,
        )
        .unwrap();
        assert_eq!(artifacts.gain[(1, 0)], 0.0);
        assert_eq!(posterior.mean[1], 0.0);
        assert!(posterior.mean[0] > 0.0);
    }

    #[test]
    fn masked_update_keeps_covariance_symmetric() {
        // A scaled gain invalidates the (I−KH)·P shortcut, so the masked
        // update must fall back to the Joseph form even when not requested.
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let plant = linear_plant(DMatrix::identity(2, 2), c);
        let belief = GaussianBelief::full(
            DVector::from_column_slice(&[0.3, -0.1]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.1]),
        );
        let y = DVector::from_element(1, 0.9);
        let r = DMatrix::identity(1, 1) * 0.05;
        let u = DVector::zeros(1);
        let mask = DVector::from_column_slice(&[0.05, 0.0]);
        let (masked, _) =
            ekf_update_with(&belief, &plant, &u, &y, &r, Some(&mask), false).unwrap();
        let cov = masked.covariance();
        assert_abs_diff_eq!(cov.clone(), cov.transpose(), epsilon = 1e-14);
        let (masked_joseph, _) =
            ekf_update_with(&belief, &plant, &u, &y, &r, Some(&mask), true).unwrap();
        assert_abs_diff_eq!(cov, masked_joseph.covariance(), epsilon = 1e-14);
    }
}
