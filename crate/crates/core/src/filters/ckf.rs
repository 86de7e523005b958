//! Cubature Kalman filter: propagates the belief through the nonlinear maps
//! with the third-degree spherical-radial cubature rule instead of
//! linearizing them.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::filters::{
    apply_gain_mask, cubature_points, ensure_finite_mat, ensure_finite_vec, map_columns,
    GaussianBelief, UpdateArtifacts,
};
use crate::linalg::spd_inverse;
use crate::machine::PlantModel;

/// Time update: factor `P = S·Sᵀ`, push the `2n` cubature points through
/// `f`, then `x̂⁻` is the point average and
/// `P⁻ = (1/m)·Σ X*·X*ᵀ − x̂⁻·x̂⁻ᵀ + Q`.
pub fn ckf_predict(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    q_cov: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let n = belief.dim();
    let s = belief.sqrt_factor()?;
    let cub = cubature_points(n);
    let pts = cub.points_about(&s, &belief.mean);
    let propagated = map_columns(&pts, n, |x| model.f(x, u));
    ensure_finite_mat(&propagated, "propagated cubature points")?;

    let mean = propagated.column_mean();
    let cov =
        (&propagated * propagated.transpose()) * cub.weight - &mean * mean.transpose() + q_cov;
    Ok(GaussianBelief::full(mean, cov))
}

/// Measurement update: map the cubature points of the prior through `h`,
/// form the innovation and cross covariances from the point clouds, then
/// apply the gain `W = P_xz·P_zz⁻¹` to mean and covariance
/// (`P⁺ = P⁻ − W·P_zz·Wᵀ`).
pub fn ckf_update(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    r_cov: &DMatrix<f64>,
) -> Result<(GaussianBelief, UpdateArtifacts)> {
    ckf_update_with(belief, model, u, y, r_cov, None)
}

/// [`ckf_update`] with an optional gain mask applied to `W` before the
/// mean/covariance corrections (false-data-injection tampering model).
///
/// A masked update replaces the shortcut `P⁻ − W·P_zz·Wᵀ` with the
/// general-gain form `P⁻ − W·P_xzᵀ − P_xz·Wᵀ + W·P_zz·Wᵀ`: the shortcut is
/// an identity that only holds for the optimal gain and loses positive
/// definiteness once the gain is scaled.
pub fn ckf_update_with(
    belief: &GaussianBelief,
    model: &PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    r_cov: &DMatrix<f64>,
    gain_mask: Option<&DVector<f64>>,
) -> Result<(GaussianBelief, UpdateArtifacts)> {
    let n = belief.dim();
    let p_prior = belief.covariance();
    let s = belief.sqrt_factor()?;
    let cub = cubature_points(n);
    let pts = cub.points_about(&s, &belief.mean);
    let zs = map_columns(&pts, model.meas_dim(), |x| model.h(x, u));
    ensure_finite_mat(&zs, "measurement cubature points")?;

    let z_hat = zs.column_mean();
    let p_zz = (&zs * zs.transpose()) * cub.weight - &z_hat * z_hat.transpose() + r_cov;
    let p_xz = (&pts * zs.transpose()) * cub.weight - &belief.mean * z_hat.transpose();

    let p_zz_inv = spd_inverse(&p_zz, "innovation covariance")?;
    let gain = apply_gain_mask(&p_xz * p_zz_inv, gain_mask)?;

    let innovation = y - &z_hat;
    let mean = &belief.mean + &gain * innovation;
    ensure_finite_vec(&mean, "updated mean")?;
    let cov = if gain_mask.is_some() {
        &p_prior - &gain * p_xz.transpose() - &p_xz * gain.transpose()
            + &gain * &p_zz * gain.transpose()
    } else {
        &p_prior - &gain * &p_zz * gain.transpose()
    };

    let artifacts = UpdateArtifacts {
        predicted_meas: z_hat,
        innovation_cov: p_zz,
        cross_cov: p_xz,
        gain,
    };
    Ok((GaussianBelief::full(mean, cov), artifacts))
}
