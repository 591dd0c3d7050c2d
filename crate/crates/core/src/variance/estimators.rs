use std::fmt;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use super::pairs::PairIndex;
use super::system::{
    build_kappa_system, solve_kappa_system, KappaSystem, SolverInfo, SolverOptions,
};
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::model::{AnnihilatorOperator, ClusterPartition, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lz,
    Cr,
    Unfeasible,
    General,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lz => "lz",
            Method::Cr => "cr",
            Method::Unfeasible => "unfeasible",
            Method::General => "general",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lz" => Ok(Method::Lz),
            "cr" => Ok(Method::Cr),
            "unf" | "unfeasible" => Ok(Method::Unfeasible),
            "general" => Ok(Method::General),
            other => Err(Error::InvalidInput(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Meat matrix `Σ̂` of the sandwich.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    /// d × d, exactly symmetric.
    pub sigma: Mat<f64>,
    pub method: Method,
    pub solver_info: Option<SolverInfo>,
    pub kappa_inf_norm: Option<f64>,
    /// Smallest eigenvalue of `Σ̂`; negative values are reported, not repaired.
    pub min_eigenvalue: f64,
}

impl VarianceEstimate {
    fn new(sigma: Mat<f64>, method: Method, solver_info: Option<SolverInfo>) -> Self {
        let min_eigenvalue = min_eigenvalue(sigma.as_ref());
        if method == Method::Cr && min_eigenvalue < 0.0 {
            log::warn!(
                "corrected meat matrix is indefinite (smallest eigenvalue {min_eigenvalue:.3e})"
            );
        }
        Self {
            sigma,
            method,
            solver_info,
            kappa_inf_norm: None,
            min_eigenvalue,
        }
    }
}

/// `(1/n) Σ_g s_g s_g'` with cluster scores `s_g = Σ_{i∈T_g} v̂ᵢ eᵢ`.
fn cluster_score_meat(v_hat: MatRef<'_, f64>, e: &[f64], partition: &ClusterPartition) -> Mat<f64> {
    let d = v_hat.ncols();
    let n = e.len();
    let mut out = Mat::<f64>::zeros(d, d);
    let mut score = vec![0.0; d];
    for members in &partition.groups {
        score.iter_mut().for_each(|s| *s = 0.0);
        for &i in members {
            for (c, s) in score.iter_mut().enumerate() {
                *s += v_hat[(i, c)] * e[i];
            }
        }
        for r in 0..d {
            for c in 0..=r {
                out[(r, c)] += score[r] * score[c];
            }
        }
    }
    Mat::from_fn(
        d,
        d,
        |r, c| if r >= c { out[(r, c)] } else { out[(c, r)] } / n as f64,
    )
}

/// `(1/n) Σ_a w_a v̂_{i_a} v̂_{j_a}'`, symmetrized.
fn pair_weighted_meat(v_hat: MatRef<'_, f64>, idx: &PairIndex, weights: &[f64]) -> Mat<f64> {
    let d = v_hat.ncols();
    let n = idx.n_obs();
    let mut out = Mat::<f64>::zeros(d, d);
    for (p, &w) in idx.pairs().iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for r in 0..d {
            let vr = w * v_hat[(p.i, r)];
            for c in 0..d {
                out[(r, c)] += vr * v_hat[(p.j, c)];
            }
        }
    }
    Mat::from_fn(d, d, |r, c| 0.5 * (out[(r, c)] + out[(c, r)]) / n as f64)
}

fn check_partition(fit: &FitResult, partition: &ClusterPartition) -> Result<()> {
    if partition.n_obs() != fit.n() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} observations, fit has {}",
            partition.n_obs(),
            fit.n()
        )));
    }
    Ok(())
}

/// Liang–Zeger meat `(1/n) Σ_g Σ_{i,j∈T_g} v̂ᵢv̂ⱼ' ûᵢûⱼ`.
pub fn sigma_lz(fit: &FitResult, partition: &ClusterPartition) -> Result<VarianceEstimate> {
    check_partition(fit, partition)?;
    let sigma = cluster_score_meat(fit.v_hat.as_ref(), &fit.u_hat, partition);
    Ok(VarianceEstimate::new(sigma, Method::Lz, None))
}

/// The Liang–Zeger form evaluated at the true errors.
pub fn sigma_unfeasible(
    fit: &FitResult,
    partition: &ClusterPartition,
    true_errors: &[f64],
) -> Result<VarianceEstimate> {
    check_partition(fit, partition)?;
    if true_errors.len() != fit.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} true errors for {} observations",
            true_errors.len(),
            fit.n()
        )));
    }
    let sigma = cluster_score_meat(fit.v_hat.as_ref(), true_errors, partition);
    Ok(VarianceEstimate::new(sigma, Method::Unfeasible, None))
}

/// Residual cross-products `s_b = û_{i_b} û_{j_b}` over the pair index.
pub fn residual_products(u_hat: &[f64], idx: &PairIndex) -> Vec<f64> {
    idx.pairs()
        .iter()
        .map(|p| u_hat[p.i] * u_hat[p.j])
        .collect()
}

/// `(1/n) Σ_a Σ_b κ[a,b] v̂_{i_a}v̂_{j_a}' û_{i_b}û_{j_b}` for an explicit L × L `κ`.
pub fn sigma_general(
    fit: &FitResult,
    idx: &PairIndex,
    kappa: MatRef<'_, f64>,
) -> Result<VarianceEstimate> {
    let l = idx.len();
    if kappa.nrows() != l || kappa.ncols() != l {
        return Err(Error::DimensionMismatch(format!(
            "kappa is {} × {}, pair index has L = {l}",
            kappa.nrows(),
            kappa.ncols()
        )));
    }
    if idx.n_obs() != fit.n() {
        return Err(Error::DimensionMismatch(format!(
            "pair index covers {} observations, fit has {}",
            idx.n_obs(),
            fit.n()
        )));
    }
    let s = residual_products(&fit.u_hat, idx);
    let weights: Vec<f64> = (0..l)
        .map(|a| (0..l).map(|b| kappa[(a, b)] * s[b]).sum())
        .collect();
    let sigma = pair_weighted_meat(fit.v_hat.as_ref(), idx, &weights);
    Ok(VarianceEstimate::new(sigma, Method::General, None))
}

/// Corrected meat: solves `A c = s` and returns `(1/n) Σ_a c_a v̂_{i_a}v̂_{j_a}'`.
pub fn sigma_cr(
    fit: &FitResult,
    op: &AnnihilatorOperator,
    idx: &PairIndex,
    opts: &SolverOptions,
) -> Result<VarianceEstimate> {
    let sys = build_kappa_system(op, idx, opts)?;
    sigma_cr_with_system(fit, &sys, opts)
}

/// [`sigma_cr`] on a prebuilt system, so that its factorization can be
/// reused for further solves such as the κ-norm.
pub fn sigma_cr_with_system(
    fit: &FitResult,
    sys: &KappaSystem<'_>,
    opts: &SolverOptions,
) -> Result<VarianceEstimate> {
    let idx = sys.pair_index();
    if idx.n_obs() != fit.n() {
        return Err(Error::DimensionMismatch(format!(
            "pair index covers {} observations, fit has {}",
            idx.n_obs(),
            fit.n()
        )));
    }
    let s = residual_products(&fit.u_hat, idx);
    let (c, info) = solve_kappa_system(sys, &s, opts)?;
    let sigma = pair_weighted_meat(fit.v_hat.as_ref(), idx, &c);
    Ok(VarianceEstimate::new(sigma, Method::Cr, Some(info)))
}
