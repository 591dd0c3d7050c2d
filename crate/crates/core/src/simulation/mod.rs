//! Monte Carlo designs for studying the variance estimators, with named
//! presets for the design grids.

mod basis;
mod design;
mod monte_carlo;
mod presets;
mod rng;

pub use basis::{build_power_basis, power_basis_prefix, BASIS_SIZES, MAX_BASIS};
pub use design::{
    calibrate_constants, gen_many_controls, gen_partially_linear, gen_twoway_fe, generate, t_fn,
    Calibration, ControlKind, DesignSpec, DummyAssignment, Simulated, Variant,
};
pub use monte_carlo::{
    run_monte_carlo, run_replication, EstimatorSummary, MonteCarloConfig, MonteCarloSummary,
    Replication,
};
pub use presets::{list_presets, resolve_preset, Preset};
pub use rng::{replication_rng, stream_rng, CALIBRATION_STREAM};
