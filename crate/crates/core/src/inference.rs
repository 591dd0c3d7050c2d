//! Sandwich covariance, standard errors, Gaussian intervals and p-values.

use faer::Mat;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetrize, to_rows};
use crate::model::FitResult;
use crate::variance::{Method, VarianceEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub method: Method,
    pub alpha: f64,
    pub beta_hat: Vec<f64>,
    /// Row-major `Ω̂ = Γ̂⁻¹ Σ̂ Γ̂⁻¹`.
    pub omega_hat: Vec<Vec<f64>>,
    /// `√(Ω̂_kk / n)`.
    pub std_errors: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// Two-sided p-values for `β_k = 0`.
    pub p_values: Vec<f64>,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Two-sided p-value `2 Φ(−|z|)`.
pub fn two_sided_p_value(z: f64) -> f64 {
    2.0 * standard_normal().cdf(-z.abs())
}

/// `Ω̂ = Γ̂⁻¹ Σ̂ Γ̂⁻¹`, symmetrized.
pub fn sandwich(fit: &FitResult, var: &VarianceEstimate) -> Result<Mat<f64>> {
    let d = fit.d();
    if var.sigma.nrows() != d || var.sigma.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "meat is {} × {}, fit has d = {d}",
            var.sigma.nrows(),
            var.sigma.ncols()
        )));
    }
    let bread = spd_inverse(fit.gram.as_ref()).ok_or(Error::CollinearRegressors {
        lambda_min: crate::linalg::min_eigenvalue(fit.gram.as_ref()),
    })?;
    let omega = &bread * &var.sigma * &bread;
    Ok(symmetrize(omega.as_ref()))
}

/// Intervals `β̂_k ∓ Φ⁻¹(1 − α/2) √(Ω̂_kk / n)` and p-values from a
/// sandwich covariance.
pub fn confidence_interval(
    beta_hat: &[f64],
    omega: &Mat<f64>,
    n: usize,
    alpha: f64,
    method: Method,
) -> Result<InferenceReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha = {alpha} is not in (0, 1)"
        )));
    }
    let d = beta_hat.len();
    if omega.nrows() != d || omega.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {} × {}, d = {d}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut std_errors = Vec::with_capacity(d);
    for k in 0..d {
        let v = omega[(k, k)];
        if v.is_nan() || v <= 0.0 || !v.is_finite() {
            return Err(Error::IndefiniteVariance {
                coordinate: k,
                value: v,
            });
        }
        std_errors.push((v / n as f64).sqrt());
    }
    let ci_lower = (0..d).map(|k| beta_hat[k] - z * std_errors[k]).collect();
    let ci_upper = (0..d).map(|k| beta_hat[k] + z * std_errors[k]).collect();
    let p_values = (0..d)
        .map(|k| two_sided_p_value(beta_hat[k] / std_errors[k]))
        .collect();
    Ok(InferenceReport {
        method,
        alpha,
        beta_hat: beta_hat.to_vec(),
        omega_hat: to_rows(omega.as_ref()),
        std_errors,
        ci_lower,
        ci_upper,
        p_values,
    })
}

/// Sandwich plus intervals in one step.
pub fn infer(fit: &FitResult, var: &VarianceEstimate, alpha: f64) -> Result<InferenceReport> {
    let omega = sandwich(fit, var)?;
    confidence_interval(&fit.beta_hat, &omega, fit.n(), alpha, var.method)
}
