//! Working models: multivariate OLS for the outcome on observed units and a
//! logistic regression MLE for the missingness mechanism.
//!
//! Deliberate misspecification is expressed by dropping covariate columns at
//! fit time; coefficients are zero-padded back to the full width so every
//! downstream shape stays p-uniform.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{symmetrize, Dataset};

const LOGISTIC_MAX_ITER: usize = 100;
const LOGISTIC_GAMMA_BOUND: f64 = 1e4;
const GRAM_MAX_COND: f64 = 1e12;
const PROPENSITY_CLIP: f64 = 1e-6;

/// Fitted outcome regression y_i = B^T x_i + eps_i on the observed units.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    /// p x T coefficient matrix, zero rows in dropped positions.
    pub b_hat: DMatrix<f64>,
    /// T x T residual covariance, divisor n_obs - p_kept.
    pub sigma_eps_hat: DMatrix<f64>,
    pub n_obs: usize,
    pub dropped_columns: Vec<usize>,
}

/// Fitted logistic model for Pr[Z=1 | x].
#[derive(Debug, Clone)]
pub struct PropensityModel {
    /// p-vector, zero entries in dropped positions.
    pub gamma_hat: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub dropped_columns: Vec<usize>,
}

/// tau(s) = (1 + e^{-s})^{-1}, stable over the full double range.
pub fn inverse_logit(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn kept_columns(p: usize, drop: &[usize]) -> Vec<usize> {
    (0..p).filter(|j| !drop.contains(j)).collect()
}

fn restrict_rows(ds: &Dataset, kept: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(ds.n(), kept.len(), |i, j| ds.x()[(i, kept[j])])
}

/// OLS of the observed outcome rows on the kept covariate columns.
///
/// B_hat solves the observed-unit normal equations; rows for dropped columns
/// are zero. The residual covariance uses the degrees-of-freedom corrected
/// divisor n_obs - p_kept.
pub fn fit_ols(ds: &Dataset, drop: &[usize]) -> Result<OutcomeModel> {
    let p = ds.p();
    let t_len = ds.t_len();
    let kept = kept_columns(p, drop);
    let pk = kept.len();
    let xk = restrict_rows(ds, &kept);
    let n_obs = ds.n_observed();
    if n_obs <= pk {
        return Err(Error::InsufficientObserved {
            observed: n_obs,
            needed: pk + 1,
        });
    }

    let mut gram = DMatrix::zeros(pk, pk);
    let mut cross = DMatrix::zeros(pk, t_len);
    for i in 0..ds.n() {
        if ds.z()[i] == 1 {
            let xi = xk.row(i).transpose();
            gram += &xi * xi.transpose();
            cross += &xi * ds.y().row(i);
        }
    }
    let gram = symmetrize(&gram);

    let eig = gram.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.amax();
    let min_ev = eig.eigenvalues.min();
    let cond = if min_ev <= 0.0 { f64::INFINITY } else { max_ev / min_ev };
    if !cond.is_finite() || cond > GRAM_MAX_COND {
        return Err(Error::SingularDesign { cond });
    }

    let chol = gram.cholesky().ok_or(Error::SingularDesign { cond })?;
    let b_kept = chol.solve(&cross);

    let mut sigma_eps = DMatrix::zeros(t_len, t_len);
    for i in 0..ds.n() {
        if ds.z()[i] == 1 {
            let resid = ds.y().row(i).transpose() - b_kept.transpose() * xk.row(i).transpose();
            sigma_eps += &resid * resid.transpose();
        }
    }
    sigma_eps /= (n_obs - pk) as f64;
    let sigma_eps = symmetrize(&sigma_eps);

    let mut b_hat = DMatrix::zeros(p, t_len);
    for (r, &j) in kept.iter().enumerate() {
        b_hat.row_mut(j).copy_from(&b_kept.row(r));
    }

    Ok(OutcomeModel {
        b_hat,
        sigma_eps_hat: sigma_eps,
        n_obs,
        dropped_columns: drop.to_vec(),
    })
}

/// Row i of the result is B_hat^T x_i.
pub fn predict(model: &OutcomeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.b_hat.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns but the model expects {}",
            x.ncols(),
            model.b_hat.nrows()
        )));
    }
    Ok(x * &model.b_hat)
}

fn log_likelihood(eta: &DVector<f64>, z: &[u8]) -> f64 {
    // z*eta - log(1 + e^eta), written to avoid overflow for large |eta|
    eta.iter()
        .zip(z)
        .map(|(&e, &zi)| {
            let log1pe = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            f64::from(zi) * e - log1pe
        })
        .sum()
}

/// Logistic MLE by damped Newton iterations starting from gamma = 0.
///
/// Converges when the score norm drops below 1e-10 * n; steps are halved
/// while they would decrease the likelihood. Diverging coefficients are
/// reported as `Separation`.
pub fn fit_logistic(ds: &Dataset, drop: &[usize]) -> Result<PropensityModel> {
    let p = ds.p();
    let n = ds.n();
    let ones = ds.n_observed();
    if ones == 0 || ones == n {
        return Err(Error::AllSameIndicator);
    }
    let kept = kept_columns(p, drop);
    let pk = kept.len();
    let xk = restrict_rows(ds, &kept);
    let z = ds.z();
    let tol = 1e-10 * n as f64;

    let mut gamma = DVector::zeros(pk);
    let mut eta = &xk * &gamma;
    let mut ll = log_likelihood(&eta, z);
    let mut score_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=LOGISTIC_MAX_ITER {
        iterations = iter;
        let tau: DVector<f64> = eta.map(inverse_logit);
        let mut score = DVector::zeros(pk);
        let mut info = DMatrix::zeros(pk, pk);
        for i in 0..n {
            let xi = xk.row(i).transpose();
            let w = tau[i] * (1.0 - tau[i]);
            score += &xi * (f64::from(z[i]) - tau[i]);
            info += &xi * xi.transpose() * w;
        }
        score_norm = score.norm();
        if score_norm <= tol {
            converged = true;
            break;
        }
        let info = symmetrize(&info);
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => {
                return Err(Error::Separation {
                    norm: gamma.norm(),
                    iterations: iter,
                })
            }
        };
        // step-halving on likelihood decrease; small absolute slack so that
        // rounding at the optimum cannot stall the line search
        let slack = 1e-9 * (1.0 + ll.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let candidate = &gamma + &step * scale;
            let eta_c = &xk * &candidate;
            let ll_c = log_likelihood(&eta_c, z);
            if ll_c >= ll - slack {
                gamma = candidate;
                eta = eta_c;
                ll = ll_c;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if gamma.norm() > LOGISTIC_GAMMA_BOUND {
            return Err(Error::Separation {
                norm: gamma.norm(),
                iterations: iter,
            });
        }
    }

    if !converged {
        return Err(Error::Separation {
            norm: gamma.norm(),
            iterations,
        });
    }

    // a tiny score with fitted linear predictors strictly separating the two
    // indicator groups means the likelihood is unbounded along gamma: the
    // finite iterate is an artifact of saturated tails, not an MLE
    let min_eta_one = eta
        .iter()
        .zip(z)
        .filter(|&(_, &zi)| zi == 1)
        .map(|(&e, _)| e)
        .fold(f64::INFINITY, f64::min);
    let max_eta_zero = eta
        .iter()
        .zip(z)
        .filter(|&(_, &zi)| zi == 0)
        .map(|(&e, _)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    if min_eta_one > max_eta_zero {
        return Err(Error::Separation {
            norm: gamma.norm(),
            iterations,
        });
    }

    let mut gamma_full = DVector::zeros(p);
    for (r, &j) in kept.iter().enumerate() {
        gamma_full[j] = gamma[r];
    }

    Ok(PropensityModel {
        gamma_hat: gamma_full,
        converged,
        iterations,
        score_norm,
        dropped_columns: drop.to_vec(),
    })
}

/// Fitted propensities tau(x_i^T gamma_hat), clipped into [1e-6, 1 - 1e-6].
pub fn propensities(model: &PropensityModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != model.gamma_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns but the model expects {}",
            x.ncols(),
            model.gamma_hat.len()
        )));
    }
    let eta = x * &model.gamma_hat;
    Ok(eta.map(|e| inverse_logit(e).clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Grid;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn dataset(x: DMatrix<f64>, z: Vec<f64>, y: DMatrix<f64>) -> Dataset {
        let t = y.ncols();
        let grid = if t == 1 {
            Grid::new(vec![0.5]).unwrap()
        } else {
            Grid::equidistant(t)
        };
        Dataset::new(x, z, y, grid).unwrap()
    }

    #[test]
    fn inverse_logit_values() {
        assert_abs_diff_eq!(inverse_logit(0.0), 0.5);
        assert_abs_diff_eq!(inverse_logit(2.0), 0.8807970779778824, epsilon = 1e-15);
        assert_abs_diff_eq!(
            inverse_logit(3.7),
            1.0 - inverse_logit(-3.7),
            epsilon = 1e-15
        );
        // stable far into the tails
        assert_eq!(inverse_logit(-700.0), 0.0f64.max(inverse_logit(-700.0)));
        assert!(inverse_logit(700.0) <= 1.0);
        assert!(inverse_logit(-10.0) < inverse_logit(10.0));
    }

    #[test]
    fn ols_intercept_only_is_column_mean() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 2.0, 3.0, 4.0, 6.0, 6.0]);
        let ds = dataset(x, vec![1.0; 4], y);
        let om = fit_ols(&ds, &[]).unwrap();
        assert_abs_diff_eq!(om.b_hat[(0, 0)], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(om.b_hat[(0, 1)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_matches_hand_normal_equations() {
        // x rows (1,0),(1,1),(1,2), y = (1,2,4): solution (5/6, 3/2)
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]);
        let ds = dataset(x, vec![1.0; 3], y);
        let om = fit_ols(&ds, &[]).unwrap();
        assert_abs_diff_eq!(om.b_hat[(0, 0)], 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(om.b_hat[(1, 0)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn ols_ignores_missing_rows() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DMatrix::from_row_slice(3, 1, &[2.0, 4.0, 999.0]);
        let ds_partial = dataset(x.clone(), vec![1.0, 1.0, 0.0], y);
        let om_partial = fit_ols(&ds_partial, &[]).unwrap();
        let x2 = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let y2 = DMatrix::from_row_slice(2, 1, &[2.0, 4.0]);
        let ds_full = dataset(x2, vec![1.0, 1.0], y2);
        let om_full = fit_ols(&ds_full, &[]).unwrap();
        assert_abs_diff_eq!(om_partial.b_hat[(0, 0)], om_full.b_hat[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn ols_normal_equations_residual_orthogonality() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let y = DMatrix::from_fn(n, 4, |_, _| rng.gen_range(-2.0..2.0));
        let z: Vec<f64> = (0..n).map(|i| if i < 5 { 1.0 } else { f64::from(rng.gen_bool(0.7)) }).collect();
        let ds = dataset(x.clone(), z.clone(), y.clone());
        let om = fit_ols(&ds, &[]).unwrap();
        // sum_i Z_i x_i eps_i^T = 0
        let mut cross = DMatrix::zeros(3, 4);
        for i in 0..n {
            if ds.z()[i] == 1 {
                let resid = y.row(i).transpose() - om.b_hat.transpose() * x.row(i).transpose();
                cross += x.row(i).transpose() * resid.transpose();
            }
        }
        assert!(cross.amax() < 1e-8);
    }

    #[test]
    fn ols_column_rescaling_equivariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let y = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
        let ds = dataset(x.clone(), vec![1.0; n], y.clone());
        let om = fit_ols(&ds, &[]).unwrap();
        let a = 3.5;
        let mut xs = x.clone();
        xs.column_mut(1).scale_mut(a);
        let ds_s = dataset(xs.clone(), vec![1.0; n], y);
        let om_s = fit_ols(&ds_s, &[]).unwrap();
        assert_abs_diff_eq!(om_s.b_hat[(1, 0)], om.b_hat[(1, 0)] / a, epsilon = 1e-10);
        let fit = predict(&om, &x).unwrap();
        let fit_s = predict(&om_s, &xs).unwrap();
        assert!((&fit - &fit_s).amax() < 1e-10);
    }

    #[test]
    fn ols_dropped_columns_zero_padded() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 25;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let y = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
        let ds = dataset(x, vec![1.0; n], y);
        let om = fit_ols(&ds, &[1]).unwrap();
        assert_eq!(om.b_hat.nrows(), 3);
        assert_abs_diff_eq!(om.b_hat[(1, 0)], 0.0);
        assert_abs_diff_eq!(om.b_hat[(1, 1)], 0.0);
    }

    #[test]
    fn ols_singular_design_detected() {
        // duplicated column
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let y = DMatrix::from_element(4, 1, 1.0);
        let ds = dataset(x, vec![1.0; 4], y);
        assert!(matches!(fit_ols(&ds, &[]), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn predict_basics() {
        let om = OutcomeModel {
            b_hat: DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]),
            sigma_eps_hat: DMatrix::identity(2, 2),
            n_obs: 10,
            dropped_columns: vec![],
        };
        // x = (1,2) -> prediction (a + 2b) per grid point with columns (a,b)
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let pred = predict(&om, &x).unwrap();
        assert_abs_diff_eq!(pred[(0, 0)], 5.0);
        assert_abs_diff_eq!(pred[(0, 1)], 11.0);
        let zero = OutcomeModel {
            b_hat: DMatrix::zeros(2, 2),
            ..om
        };
        assert!(predict(&zero, &x).unwrap().amax() == 0.0);
        let bad = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(matches!(predict(&zero, &bad), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn logistic_intercept_only_closed_form() {
        let n = 10;
        let k = 3;
        let x = DMatrix::from_element(n, 1, 1.0);
        let z: Vec<f64> = (0..n).map(|i| f64::from(i < k)).collect();
        let y = DMatrix::from_element(n, 1, 0.0);
        let ds = dataset(x, z, y);
        let pm = fit_logistic(&ds, &[]).unwrap();
        let expected = (k as f64 / (n - k) as f64).ln();
        assert_abs_diff_eq!(pm.gamma_hat[0], expected, epsilon = 1e-8);
        assert!(pm.converged);
    }

    #[test]
    fn logistic_all_observed_rejected() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DMatrix::from_element(4, 1, 0.0);
        let ds = dataset(x, vec![1.0; 4], y);
        assert!(matches!(fit_logistic(&ds, &[]), Err(Error::AllSameIndicator)));
    }

    #[test]
    fn logistic_separation_detected() {
        // perfectly separated in x2
        let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 9.5 });
        let z: Vec<f64> = (0..20).map(|i| f64::from(i >= 10)).collect();
        let y = DMatrix::from_element(20, 1, 0.0);
        let ds = dataset(x, z, y);
        assert!(matches!(fit_logistic(&ds, &[]), Err(Error::Separation { .. })));
    }

    #[test]
    fn logistic_matches_grid_search_oracle() {
        // n=200 from known gamma0 with p=2; coarse-to-fine likelihood grid search
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let n = 200;
        let gamma0 = [0.4, -0.8];
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let eta = gamma0[0] * x[(i, 0)] + gamma0[1] * x[(i, 1)];
                f64::from(rng.gen_bool(inverse_logit(eta)))
            })
            .collect();
        let y = DMatrix::from_element(n, 1, 0.0);
        let ds = dataset(x.clone(), z.clone(), y);
        let pm = fit_logistic(&ds, &[]).unwrap();

        let ll = |g0: f64, g1: f64| {
            let eta = DVector::from_fn(n, |i, _| g0 * x[(i, 0)] + g1 * x[(i, 1)]);
            log_likelihood(&eta, ds.z())
        };
        let mut best = (0.0, 0.0);
        let mut width = 4.0;
        for _ in 0..12 {
            let mut best_ll = f64::NEG_INFINITY;
            let mut next = best;
            for a in -20..=20 {
                for b in -20..=20 {
                    let g0 = best.0 + width * a as f64 / 20.0;
                    let g1 = best.1 + width * b as f64 / 20.0;
                    let v = ll(g0, g1);
                    if v > best_ll {
                        best_ll = v;
                        next = (g0, g1);
                    }
                }
            }
            best = next;
            width /= 5.0;
        }
        assert_abs_diff_eq!(pm.gamma_hat[0], best.0, epsilon = 1e-4);
        assert_abs_diff_eq!(pm.gamma_hat[1], best.1, epsilon = 1e-4);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let z: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
        let gamma = DVector::from_row_slice(&[0.3, -0.7]);
        let eta = &x * &gamma;
        let tau: DVector<f64> = eta.map(inverse_logit);
        let mut analytic = DVector::zeros(2);
        for i in 0..n {
            analytic += x.row(i).transpose() * (f64::from(z[i]) - tau[i]);
        }
        let h = 1e-5;
        for j in 0..2 {
            let mut gp = gamma.clone();
            let mut gm = gamma.clone();
            gp[j] += h;
            gm[j] -= h;
            let fd = (log_likelihood(&(&x * &gp), &z) - log_likelihood(&(&x * &gm), &z)) / (2.0 * h);
            assert!((fd - analytic[j]).abs() / analytic[j].abs().max(1.0) < 1e-5);
        }
    }

    #[test]
    fn propensities_clipped_and_constant_cases() {
        let pm = PropensityModel {
            gamma_hat: DVector::from_row_slice(&[0.0]),
            converged: true,
            iterations: 1,
            score_norm: 0.0,
            dropped_columns: vec![],
        };
        let x = DMatrix::from_element(3, 1, 1.0);
        let tau = propensities(&pm, &x).unwrap();
        assert!(tau.iter().all(|&t| (t - 0.5).abs() < 1e-15));

        let pm_log3 = PropensityModel {
            gamma_hat: DVector::from_row_slice(&[3.0f64.ln()]),
            ..pm.clone()
        };
        let tau = propensities(&pm_log3, &x).unwrap();
        assert_abs_diff_eq!(tau[0], 0.75, epsilon = 1e-12);

        let pm_neg = PropensityModel {
            gamma_hat: DVector::from_row_slice(&[-40.0]),
            ..pm
        };
        let tau = propensities(&pm_neg, &x).unwrap();
        assert_abs_diff_eq!(tau[0], 1e-6);
    }
}
