//! Estimation and cluster-robust inference for linear regressions whose
//! nuisance control block is a non-negligible fraction of the sample size.
//!
//! The pipeline is: partial the controls out of the regressors of interest
//! ([`model`]), estimate the meat of the sandwich with either the classical
//! Liang–Zeger formula or the many-controls correction ([`variance`]), and
//! assemble standard errors and intervals ([`inference`]). [`simulation`]
//! reproduces the Monte Carlo designs used to study the estimators, and
//! [`oracle`] holds brute-force reference computations used for validation.

pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod simulation;
pub mod variance;

pub use error::{Error, Result};
pub use inference::{
    confidence_interval, infer, normal_quantile, sandwich, two_sided_p_value, InferenceReport,
};
pub use model::{
    assumption_diagnostics, compute_annihilator, fit_ols, partition_clusters, AnnihilatorOperator,
    AnnihilatorOptions, ClusterPartition, Dataset, Diagnostics, FitResult,
};
pub use simulation::{
    list_presets, resolve_preset, run_monte_carlo, ControlKind, DesignSpec, MonteCarloConfig,
    MonteCarloSummary, Variant,
};
pub use variance::{
    build_kappa_system, build_pair_index, kappa_inf_norm, residual_products, sigma_cr,
    sigma_cr_with_system, sigma_general, sigma_lz, sigma_unfeasible, solve_kappa_system,
    KappaSystem, Method, NormMode, PairIndex, PairRestriction, SolverInfo, SolverMode,
    SolverOptions, StorageMode, SystemForm, VarianceEstimate,
};

pub use faer::{Mat, MatRef};

/// Keeps dense factorizations and products on the calling thread, so that
/// results do not depend on the core count. Replication-level parallelism
/// in [`simulation`] is unaffected.
pub fn use_sequential_linalg() {
    faer::set_global_parallelism(faer::Par::Seq);
}
