//! Mean-curve estimators (outcome-regression, double robust, complete-case)
//! and their plug-in asymptotic covariance matrices.
//!
//! Every returned covariance is the covariance of sqrt(n) * (mu_hat - mu),
//! so all three estimators share one band-construction convention.

use nalgebra::{DMatrix, DVector};

use crate::bands::roughness;
use crate::error::{Error, Result};
use crate::model::{symmetrize, CovariateMoments, Dataset, MeanEstimate, Method};
use crate::nuisance::{propensities, OutcomeModel, PropensityModel};

/// Inverse-probability weights w_i = Z_i / tau_hat_i and the E[1/tau] plug-in.
#[derive(Debug, Clone)]
pub struct DrWeights {
    pub w: DVector<f64>,
    /// n^-1 sum_i 1/tau_hat(x_i^T gamma_hat) over all n units.
    pub mean_inv_tau: f64,
}

/// w_i = Z_i / tau_hat_i; the mean inverse propensity averages over all
/// units, observed and missing.
pub fn dr_weights(ds: &Dataset, pm: &PropensityModel) -> Result<DrWeights> {
    let tau = propensities(pm, ds.x())?;
    let n = ds.n();
    let mut w = DVector::zeros(n);
    let mut sum_inv = 0.0;
    for i in 0..n {
        sum_inv += 1.0 / tau[i];
        if ds.z()[i] == 1 {
            w[i] = 1.0 / tau[i];
        }
    }
    Ok(DrWeights {
        w,
        mean_inv_tau: sum_inv / n as f64,
    })
}

/// Outcome-regression estimate: mu_hat = n^-1 sum_i B_hat^T x_i over all
/// units, with the Theorem-1 plug-in covariance.
pub fn estimate_or(ds: &Dataset, om: &OutcomeModel) -> Result<MeanEstimate> {
    let cm = CovariateMoments::from_dataset(ds);
    let mu_hat = or_mean(ds, om);
    let c_hat = cov_or(ds, om, &cm)?;
    let profile = roughness(&om.sigma_eps_hat, ds.grid())?;
    Ok(MeanEstimate::new(Method::Or, mu_hat, c_hat, ds.n(), ds.grid().clone())
        .with_roughness(profile))
}

fn or_mean(ds: &Dataset, om: &OutcomeModel) -> DVector<f64> {
    let mut sum = DVector::zeros(ds.t_len());
    for row in ds.x().row_iter() {
        sum += om.b_hat.transpose() * row.transpose();
    }
    sum / ds.n() as f64
}

/// B_hat^T Sigma_x B_hat + (mu_x^T Pi^-1 mu_x) Sigma_eps_hat.
pub fn cov_or(_ds: &Dataset, om: &OutcomeModel, cm: &CovariateMoments) -> Result<DMatrix<f64>> {
    let pi_inv_mu = cm
        .pi
        .clone()
        .cholesky()
        .ok_or(Error::SingularPi)?
        .solve(&cm.mu_x);
    let scale = cm.mu_x.dot(&pi_inv_mu);
    let c = om.b_hat.transpose() * &cm.sigma_x * &om.b_hat + &om.sigma_eps_hat * scale;
    Ok(symmetrize(&c))
}

/// Double robust estimate: the OR mean plus the inverse-probability-weighted
/// residual correction. The correction term is identically zero for missing
/// units, so their outcome rows are never read.
pub fn estimate_dr(
    ds: &Dataset,
    om: &OutcomeModel,
    pm: &PropensityModel,
) -> Result<MeanEstimate> {
    let cm = CovariateMoments::from_dataset(ds);
    let weights = dr_weights(ds, pm)?;
    let mut sum = DVector::zeros(ds.t_len());
    for (i, row) in ds.x().row_iter().enumerate() {
        let fitted = om.b_hat.transpose() * row.transpose();
        if ds.z()[i] == 1 {
            let resid = ds.y().row(i).transpose() - &fitted;
            sum += &fitted + resid * weights.w[i];
        } else {
            sum += fitted;
        }
    }
    let mu_hat = sum / ds.n() as f64;
    let c_hat = cov_dr(ds, om, pm, &cm)?;
    let profile = roughness(&om.sigma_eps_hat, ds.grid())?;
    Ok(MeanEstimate::new(Method::Dr, mu_hat, c_hat, ds.n(), ds.grid().clone())
        .with_roughness(profile))
}

/// B_hat^T Sigma_x B_hat + mean_inv_tau * Sigma_eps_hat.
///
/// This is the both-models-correct plug-in from Theorem 2; it is used for
/// all scenarios, including deliberately misspecified fits.
pub fn cov_dr(
    ds: &Dataset,
    om: &OutcomeModel,
    pm: &PropensityModel,
    cm: &CovariateMoments,
) -> Result<DMatrix<f64>> {
    let weights = dr_weights(ds, pm)?;
    let c = om.b_hat.transpose() * &cm.sigma_x * &om.b_hat
        + &om.sigma_eps_hat * weights.mean_inv_tau;
    Ok(symmetrize(&c))
}

/// Complete-case estimate: sample mean and sample covariance (divisor
/// n_obs - 1) of the observed rows.
///
/// The sample covariance is plugged in unadjusted, exactly as a naive
/// complete-case analysis would feed it to the shared band machinery; under
/// covariate-dependent missingness both the center and the implied
/// sqrt(c_hat/n) standard errors are wrong, which is the behavior the
/// replication study quantifies.
pub fn estimate_cc(ds: &Dataset) -> Result<MeanEstimate> {
    let n_obs = ds.n_observed();
    if n_obs < 2 {
        return Err(Error::InsufficientObserved {
            observed: n_obs,
            needed: 2,
        });
    }
    let t_len = ds.t_len();
    let mut mean = DVector::zeros(t_len);
    for i in 0..ds.n() {
        if ds.z()[i] == 1 {
            mean += ds.y().row(i).transpose();
        }
    }
    mean /= n_obs as f64;
    let mut cov = DMatrix::zeros(t_len, t_len);
    for i in 0..ds.n() {
        if ds.z()[i] == 1 {
            let centered = ds.y().row(i).transpose() - &mean;
            cov += &centered * centered.transpose();
        }
    }
    cov /= (n_obs - 1) as f64;
    Ok(MeanEstimate::new(Method::Cc, mean, symmetrize(&cov), ds.n(), ds.grid().clone()))
}
