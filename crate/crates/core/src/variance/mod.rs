//! Cluster-robust meat estimators and the correction system behind the
//! many-controls estimator.

mod estimators;
mod norm;
mod pairs;
mod system;

pub use estimators::{
    residual_products, sigma_cr, sigma_cr_with_system, sigma_general, sigma_lz, sigma_unfeasible,
    Method, VarianceEstimate,
};
pub use norm::{kappa_inf_norm, NormMode};
pub use pairs::{build_pair_index, CollapsedPairs, Pair, PairIndex, PairRestriction};
pub use system::{
    build_kappa_system, solve_kappa_system, KappaSystem, SolverInfo, SolverMode, SolverOptions,
    StorageMode, SystemForm,
};
