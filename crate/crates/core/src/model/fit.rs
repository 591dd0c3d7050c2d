use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::annihilator::AnnihilatorOperator;
use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize};

/// Partialled-out least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// n × d regressors of interest after partialling out the controls.
    pub v_hat: Mat<f64>,
    pub u_hat: Vec<f64>,
    /// Control coefficients in original column order; `None` marks a column
    /// dropped as collinear. Only filled by [`FitResult::with_gamma`].
    pub gamma_hat: Option<Vec<Option<f64>>>,
    /// `V̂'V̂ / n`.
    pub gram: Mat<f64>,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.u_hat.len()
    }

    pub fn d(&self) -> usize {
        self.beta_hat.len()
    }

    /// Recovers the control coefficients by back-substitution on the
    /// retained columns.
    pub fn with_gamma(mut self, data: &Dataset, op: &AnnihilatorOperator) -> Self {
        let n = data.n();
        let k = op.k_eff();
        let q = op.basis();
        let r = op.r_factor();
        let resid: Vec<f64> = (0..n)
            .map(|i| {
                data.y[i]
                    - (0..data.d())
                        .map(|j| data.x[(i, j)] * self.beta_hat[j])
                        .sum::<f64>()
            })
            .collect();
        let rhs: Vec<f64> = (0..k)
            .map(|c| (0..n).map(|i| q[(i, c)] * resid[i]).sum())
            .collect();
        let mut pivoted = vec![0.0; k];
        for row in (0..k).rev() {
            let tail: f64 = (row + 1..k).map(|c| r[(row, c)] * pivoted[c]).sum();
            pivoted[row] = (rhs[row] - tail) / r[(row, row)];
        }
        let mut gamma = vec![None; op.k_total()];
        for (p, &orig) in op.retained_columns().iter().enumerate() {
            gamma[orig] = Some(pivoted[p]);
        }
        self.gamma_hat = Some(gamma);
        self
    }
}

/// Least squares for the regressors of interest with the controls partialled
/// out: `β̂ = (Σ v̂ᵢv̂ᵢ')⁻¹ Σ v̂ᵢyᵢ`, `û = M (y − X β̂)`.
pub fn fit_ols(data: &Dataset, op: &AnnihilatorOperator) -> Result<FitResult> {
    let n = data.n();
    let d = data.d();
    if op.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "annihilator built for n = {}, dataset has n = {n}",
            op.n()
        )));
    }
    let v_hat = op.apply_mat(data.x.as_ref());
    let y_tilde = op.apply(&data.y);

    let vtv = symmetrize((v_hat.transpose() * &v_hat).as_ref());
    let scale = (0..d)
        .map(|j| (0..n).map(|i| data.x[(i, j)].powi(2)).sum::<f64>())
        .fold(0.0f64, f64::max);
    let lambda_min = min_eigenvalue(vtv.as_ref());
    let llt = match vtv.llt(Side::Lower) {
        Ok(llt) if lambda_min > 1e-12 * scale.max(f64::MIN_POSITIVE) => llt,
        _ => {
            return Err(Error::CollinearRegressors {
                lambda_min: lambda_min / n as f64,
            })
        }
    };
    let vty = Mat::from_fn(d, 1, |j, _| {
        (0..n).map(|i| v_hat[(i, j)] * data.y[i]).sum::<f64>()
    });
    let beta = llt.solve(&vty);
    let beta_hat: Vec<f64> = (0..d).map(|j| beta[(j, 0)]).collect();
    let u_hat: Vec<f64> = (0..n)
        .map(|i| y_tilde[i] - (0..d).map(|j| v_hat[(i, j)] * beta_hat[j]).sum::<f64>())
        .collect();
    let gram = Mat::from_fn(d, d, |a, b| vtv[(a, b)] / n as f64);
    Ok(FitResult {
        beta_hat,
        v_hat,
        u_hat,
        gamma_hat: None,
        gram,
    })
}
