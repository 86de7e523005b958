//! Square-root cubature Kalman filter: the CKF recursion carried entirely in
//! terms of a lower-triangular factor `S` with `P = S·Sᵀ`, so symmetry and
//! positive (semi-)definiteness of the covariance hold by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::filters::{
    apply_gain_mask, cubature_points, ensure_finite_mat, ensure_finite_vec, hcat, map_columns,
    GaussianBelief, UpdateArtifacts,
};
use crate::linalg::{solve_right_lower_sq, tria};
use crate::machine::PlantModel;

/// Time update in square-root form: propagate the cubature points through
/// `f`, center and weight them into `𝒳`, then
/// `S⁻ = tria([𝒳  S_Q])` where `S_Q` is a square-root factor of the process
/// noise covariance.
pub fn sckf_predict(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    q_sqrt: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let n = belief.dim();
    let s = belief.sqrt_factor()?;
    let cub = cubature_points(n);
    let pts = cub.points_about(&s, &belief.mean);
    let propagated = map_columns(&pts, n, |x| model.f(x, u));
    ensure_finite_mat(&propagated, "propagated cubature points")?;

    let mean = propagated.column_mean();
    let centered = weighted_centered(&propagated, &mean);
    let s_pred = tria(&hcat(&[&centered, q_sqrt]));
    Ok(GaussianBelief::from_sqrt(mean, s_pred))
}

/// Measurement update in square-root form with
/// `S_zz = tria([𝒵  S_R])`, gain from two triangular solves
/// (`W = (P_xz/S_zzᵀ)/S_zz`), and posterior factor
/// `S⁺ = tria([𝒳 − W·𝒵,  W·S_R])`.
pub fn sckf_update(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    r_sqrt: &DMatrix<f64>,
) -> Result<(GaussianBelief, UpdateArtifacts)> {
    sckf_update_with(belief, model, u, y, r_sqrt, None)
}

/// [`sckf_update`] with an optional gain mask applied to `W` before the mean
/// and factor corrections (false-data-injection tampering model).
pub fn sckf_update_with(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    r_sqrt: &DMatrix<f64>,
    gain_mask: Option<&DVector<f64>>,
) -> Result<(GaussianBelief, UpdateArtifacts)> {
    let n = belief.dim();
    let s = belief.sqrt_factor()?;
    let cub = cubature_points(n);
    let pts = cub.points_about(&s, &belief.mean);
    let zs = map_columns(&pts, model.meas_dim(), |x| model.h(x, u));
    ensure_finite_mat(&zs, "measurement cubature points")?;

    let z_hat = zs.column_mean();
    let z_centered = weighted_centered(&zs, &z_hat);
    let x_centered = weighted_centered(&pts, &belief.mean);

    let s_zz = tria(&hcat(&[&z_centered, r_sqrt]));
    let p_xz = &x_centered * z_centered.transpose();
    let gain = apply_gain_mask(
        solve_right_lower_sq(&p_xz, &s_zz, "innovation covariance factor")?,
        gain_mask,
    )?;

    let innovation = y - &z_hat;
    let mean = &belief.mean + &gain * innovation;
    ensure_finite_vec(&mean, "updated mean")?;

    let residual_block = &x_centered - &gain * &z_centered;
    let noise_block = &gain * r_sqrt;
    let s_post = tria(&hcat(&[&residual_block, &noise_block]));

    let artifacts = UpdateArtifacts {
        predicted_meas: z_hat,
        innovation_cov: &s_zz * s_zz.transpose(),
        cross_cov: p_xz,
        gain,
    };
    Ok((GaussianBelief::from_sqrt(mean, s_post), artifacts))
}

/// Center each column on `mean` and scale by `1/√m` so the product of the
/// result with its transpose is the sample covariance.
fn weighted_centered(pts: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let m = pts.ncols() as f64;
    let mut out = pts.clone();
    for mut col in out.column_iter_mut() {
        col -= mean;
    }
    out / m.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{ckf_predict, ckf_update, CovarianceRepr};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_plant(a: DMatrix<f64>, c: DMatrix<f64>) -> PlantModel {
        let n = a.nrows();
        let p = c.nrows();
        PlantModel::new(n, p, move |x, _| &a * x, move |x, _| &c * x)
    }

    fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn noiseless_identity_prediction_keeps_the_factor() {
        let plant = linear_plant(DMatrix::identity(2, 2), DMatrix::identity(1, 2));
        let s0 = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.3, 0.8]);
        let belief = GaussianBelief::from_sqrt(DVector::from_column_slice(&[1.0, -1.0]), s0.clone());
        let predicted = sckf_predict(&belief, &plant, &DVector::zeros(1), &DMatrix::zeros(2, 2))
            .unwrap();
        match &predicted.cov {
            CovarianceRepr::SqrtFactor(s) => {
                assert_abs_diff_eq!(s.clone(), s0, epsilon = 1e-10)
            }
            CovarianceRepr::Full(_) => panic!("SCKF prediction must stay in square-root form"),
        }
        assert_abs_diff_eq!(predicted.mean, belief.mean, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_prediction_has_closed_form() {
        // Diagonal S, diagonal A = a·I, diagonal S_Q: the predicted factor
        // must be diag(sqrt(a²s_i² + q_i)).
        let a = 0.9;
        let plant = linear_plant(DMatrix::identity(2, 2) * a, DMatrix::identity(1, 2));
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 1.2]));
        let q_sqrt = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.1, 0.2]));
        let belief = GaussianBelief::from_sqrt(DVector::zeros(2), s);
        let predicted = sckf_predict(&belief, &plant, &DVector::zeros(1), &q_sqrt).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_column_slice(&[
            (a * a * 0.25 + 0.01f64).sqrt(),
            (a * a * 1.44 + 0.04f64).sqrt(),
        ]));
        assert_abs_diff_eq!(predicted.sqrt_factor().unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn prediction_squares_to_the_ckf_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let plant = linear_plant(a, DMatrix::identity(1, 3));
            let p0 = random_spd(&mut rng, 3);
            let q = random_spd(&mut rng, 3) * 0.01;
            let mean = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let belief = GaussianBelief::full(mean, p0);
            let u = DVector::zeros(1);

            let ckf = ckf_predict(&belief, &plant, &u, &q).unwrap();
            let q_sqrt = nalgebra::Cholesky::new(q).unwrap().l();
            let sckf = sckf_predict(&belief, &plant, &u, &q_sqrt).unwrap();

            assert_abs_diff_eq!(sckf.mean, ckf.mean, epsilon = 1e-10);
            assert_abs_diff_eq!(sckf.covariance(), ckf.covariance(), epsilon = 1e-9);
        }
    }

    #[test]
    fn update_matches_ckf_across_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let c = DMatrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0));
            let plant = linear_plant(DMatrix::identity(3, 3), c);
            let p0 = random_spd(&mut rng, 3);
            let r = DMatrix::from_element(1, 1, rng.gen_range(0.01..0.5));
            let mean = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let y = DVector::from_element(1, rng.gen_range(-2.0..2.0));
            let belief = GaussianBelief::full(mean, p0);
            let u = DVector::zeros(1);

            let (ckf_post, ckf_art) = ckf_update(&belief, &plant, &u, &y, &r).unwrap();
            let r_sqrt = DMatrix::from_element(1, 1, r[(0, 0)].sqrt());
            let (sckf_post, sckf_art) = sckf_update(&belief, &plant, &u, &y, &r_sqrt).unwrap();

            assert_abs_diff_eq!(sckf_post.mean, ckf_post.mean, epsilon = 1e-9);
            assert_abs_diff_eq!(
                sckf_post.covariance(),
                ckf_post.covariance(),
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(sckf_art.gain, ckf_art.gain, epsilon = 1e-9);
            assert_abs_diff_eq!(
                sckf_art.innovation_cov,
                ckf_art.innovation_cov,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn scalar_static_case_reproduces_hand_kalman_algebra() {
        let plant = linear_plant(DMatrix::identity(1, 1), DMatrix::identity(1, 1));
        let belief = GaussianBelief::full(DVector::zeros(1), DMatrix::identity(1, 1));
        let (posterior, artifacts) = sckf_update(
            &belief,
            &plant,
            &DVector::zeros(1),
            &DVector::from_element(1, 2.0),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert_abs_diff_eq!(artifacts.gain[(0, 0)], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(posterior.covariance()[(0, 0)], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(posterior.mean[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_innovation_leaves_mean_unchanged() {
        let c = DMatrix::from_row_slice(1, 2, &[0.6, 0.4]);
        let plant = linear_plant(DMatrix::identity(2, 2), c.clone());
        let mean = DVector::from_column_slice(&[0.3, -0.9]);
        let belief = GaussianBelief::full(mean.clone(), DMatrix::identity(2, 2) * 0.5);
        let y = &c * &mean;
        let (posterior, _) = sckf_update(
            &belief,
            &plant,
            &DVector::zeros(1),
            &y,
            &(DMatrix::identity(1, 1) * 0.1),
        )
        .unwrap();
        assert_abs_diff_eq!(posterior.mean, mean, epsilon = 1e-10);
    }

    #[test]
    fn singular_innovation_factor_is_reported() {
        // H = 0 and S_R = 0 makes S_zz identically zero: the triangular
        // solves must fail loudly instead of dividing by zero.
        let plant = linear_plant(DMatrix::identity(1, 1), DMatrix::zeros(1, 1));
        let belief = GaussianBelief::full(DVector::zeros(1), DMatrix::identity(1, 1));
        let result = sckf_update(
            &belief,
            &plant,
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DMatrix::zeros(1, 1),
        );
        assert!(matches!(result, Err(crate::Error::Singular { .. })));
    }

    #[test]
    fn posterior_factor_diagonal_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let plant = linear_plant(DMatrix::identity(2, 2), c);
        let mut belief = GaussianBelief::full(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0);
        let q_sqrt = DMatrix::identity(2, 2) * 0.01;
        let r_sqrt = DMatrix::identity(1, 1) * 0.1;
        let u = DVector::zeros(1);
        for _ in 0..50 {
            belief = sckf_predict(&belief, &plant, &u, &q_sqrt).unwrap();
            let y = DVector::from_element(1, rng.gen_range(-1.0..1.0));
            let (post, _) = sckf_update(&belief, &plant, &u, &y, &r_sqrt).unwrap();
            belief = post;
            belief.validate().unwrap();
        }
    }
}
