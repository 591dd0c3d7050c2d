use serde::{Deserialize, Serialize};

use super::annihilator::AnnihilatorOperator;
use super::dataset::ClusterPartition;
use super::fit::FitResult;
use crate::linalg::min_eigenvalue;

/// Observable proxies for the high-dimensional regularity conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n_clusters: usize,
    pub k_eff: usize,
    /// `K_eff / n`.
    pub control_ratio: f64,
    /// `min_i M_ii`.
    pub min_m_diag: f64,
    /// `max_i ‖v̂ᵢ‖ / √n`.
    pub max_vhat_norm: f64,
    /// Smallest eigenvalue of `Γ̂`.
    pub lambda_min_gram: f64,
}

pub fn assumption_diagnostics(
    op: &AnnihilatorOperator,
    fit: &FitResult,
    partition: &ClusterPartition,
) -> Diagnostics {
    let n = op.n();
    let min_m_diag = op.diag().into_iter().fold(f64::INFINITY, f64::min);
    let max_vhat_norm = (0..n)
        .map(|i| {
            (0..fit.d())
                .map(|j| fit.v_hat[(i, j)].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0f64, f64::max)
        / (n as f64).sqrt();
    Diagnostics {
        n,
        n_clusters: partition.n_clusters(),
        k_eff: op.k_eff(),
        control_ratio: op.k_eff() as f64 / n as f64,
        min_m_diag,
        max_vhat_norm,
        lambda_min_gram: min_eigenvalue(fit.gram.as_ref()),
    }
}
