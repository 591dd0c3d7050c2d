//! Shared fixtures for the benchmarks.

use crve_core::simulation::{calibrate_constants, generate, stream_rng, CALIBRATION_STREAM};
use crve_core::{ControlKind, Dataset, DesignSpec};

/// One draw of the many-controls design with `n / size` clusters of `size`
/// and `k = ratio n` controls.
pub fn many_controls(n: usize, size: usize, ratio: f64, seed: u64) -> Dataset {
    let k = ((ratio * n as f64).round() as usize).max(1);
    let spec = DesignSpec::many_controls(n, n / size, k, ControlKind::Continuous);
    let cal = calibrate_constants(&spec, &mut stream_rng(seed, CALIBRATION_STREAM), 20_000);
    generate(&spec, &cal, &mut stream_rng(seed, 0))
        .unwrap()
        .data
}
