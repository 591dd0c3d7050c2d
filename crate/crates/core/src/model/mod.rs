//! Partialled-out least squares: the control-block annihilator, the fit of
//! the coefficients of interest, and observable regularity diagnostics.

mod annihilator;
mod dataset;
mod diagnostics;
mod fit;

pub use annihilator::{compute_annihilator, AnnihilatorOperator, AnnihilatorOptions};
pub use dataset::{partition_clusters, ClusterPartition, Dataset};
pub use diagnostics::{assumption_diagnostics, Diagnostics};
pub use fit::{fit_ols, FitResult};
