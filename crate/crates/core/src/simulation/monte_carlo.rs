use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{calibrate_constants, generate, Calibration, DesignSpec};
use super::rng::{replication_rng, stream_rng, CALIBRATION_STREAM};
use crate::error::{Error, Result};
use crate::inference::{normal_quantile, sandwich};
use crate::model::{compute_annihilator, fit_ols, partition_clusters, AnnihilatorOptions};
use crate::variance::{
    build_kappa_system, build_pair_index, kappa_inf_norm, sigma_cr_with_system, sigma_lz,
    sigma_unfeasible, Method, NormMode, PairRestriction, SolverOptions, SystemForm,
    VarianceEstimate,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Any of LZ, CR and the unfeasible estimator.
    pub estimators: Vec<Method>,
    pub parallel: bool,
    pub solver: SolverOptions,
    /// Records `‖κ_CR‖∞` in every replication when set.
    pub kappa_norm: Option<NormMode>,
    pub calibration_draws: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            reps: 1000,
            seed: 1,
            alpha: 0.05,
            estimators: vec![Method::Unfeasible, Method::Lz, Method::Cr],
            parallel: true,
            solver: SolverOptions {
                form: SystemForm::Collapsed,
                ..Default::default()
            },
            kappa_norm: None,
            calibration_draws: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub method: Method,
    /// Mean of `Ω̂₁₁` over replications where it was computed.
    pub mean_omega: f64,
    pub sd_omega: f64,
    /// `100 (mean Ω̂₁₁ − n Var(β̂)) / (n Var(β̂))`, with `Var(β̂)` the
    /// across-replication sample variance. `None` with fewer than two
    /// replications.
    pub bias_pct: Option<f64>,
    /// Share of replications rejecting the true coefficient at level α.
    pub rejection_rate: f64,
    pub coverage: f64,
    /// Replications in which the estimator failed or gave `Ω̂₁₁ ≤ 0`; these
    /// are excluded from every statistic above.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub design: DesignSpec,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub mean_beta: f64,
    pub var_beta: f64,
    pub n_var_beta: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub kappa_norm_mean: Option<f64>,
    pub kappa_norm_sd: Option<f64>,
    /// Replications whose fit failed and were dropped entirely.
    pub fit_failures: usize,
    pub calibration: Calibration,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub beta_hat: f64,
    /// `Ω̂₁₁` per configured estimator, `None` when it failed or was not
    /// positive.
    pub omega: Vec<Option<f64>>,
    pub kappa_norm: Option<f64>,
}

fn omega_11(fit: &crate::model::FitResult, var: Result<VarianceEstimate>) -> Option<f64> {
    let var = var.ok()?;
    let omega = sandwich(fit, &var).ok()?;
    let v = omega[(0, 0)];
    (v > 0.0 && v.is_finite()).then_some(v)
}

/// Draws and analyses replication `rep`.
pub fn run_replication(
    spec: &DesignSpec,
    cal: &Calibration,
    config: &MonteCarloConfig,
    rep: u64,
) -> Result<Replication> {
    let mut rng = replication_rng(config.seed, rep);
    let sim = generate(spec, cal, &mut rng)?;
    let op = compute_annihilator(sim.data.w.as_ref(), AnnihilatorOptions::default())?;
    let fit = fit_ols(&sim.data, &op)?;
    let partition = partition_clusters(&sim.data.cluster_id);
    let needs_system = config.kappa_norm.is_some() || config.estimators.contains(&Method::Cr);
    let idx = build_pair_index(&partition, &PairRestriction::None)?;
    let sys = if needs_system {
        Some(build_kappa_system(&op, &idx, &config.solver))
    } else {
        None
    };

    let omega = config
        .estimators
        .iter()
        .map(|m| match m {
            Method::Lz => omega_11(&fit, sigma_lz(&fit, &partition)),
            Method::Unfeasible => {
                omega_11(&fit, sigma_unfeasible(&fit, &partition, &sim.true_errors))
            }
            Method::Cr => {
                let var = match sys.as_ref().expect("system built") {
                    Ok(s) => sigma_cr_with_system(&fit, s, &config.solver),
                    Err(e) => Err(e.clone()),
                };
                omega_11(&fit, var)
            }
            Method::General => None,
        })
        .collect();
    let kappa_norm = match (config.kappa_norm, &sys) {
        (Some(mode), Some(Ok(s))) => kappa_inf_norm(s, mode, &config.solver).ok(),
        _ => None,
    };
    Ok(Replication {
        beta_hat: fit.beta_hat[0],
        omega,
        kappa_norm,
    })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / m;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    (mean, sd)
}

/// Runs `config.reps` replications and aggregates them in replication order,
/// so results do not depend on the thread count.
pub fn run_monte_carlo(spec: &DesignSpec, config: &MonteCarloConfig) -> Result<MonteCarloSummary> {
    spec.validate()?;
    if config.reps == 0 {
        return Err(Error::InvalidInput(
            "at least one replication is required".into(),
        ));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha = {} is not in (0, 1)",
            config.alpha
        )));
    }
    if config.estimators.contains(&Method::General) {
        return Err(Error::InvalidInput(
            "the general estimator needs an explicit kappa and cannot be simulated".into(),
        ));
    }
    let cal = calibrate_constants(
        spec,
        &mut stream_rng(config.seed, CALIBRATION_STREAM),
        config.calibration_draws,
    );
    let run = |r: usize| run_replication(spec, &cal, config, r as u64);
    let outcomes: Vec<Result<Replication>> = if config.parallel {
        (0..config.reps).into_par_iter().map(run).collect()
    } else {
        (0..config.reps).map(run).collect()
    };

    let mut fit_failures = 0;
    let mut reps = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(r) => reps.push(r),
            Err(e) if e.is_numerical() => fit_failures += 1,
            Err(e) => return Err(e),
        }
    }
    if reps.is_empty() {
        return Err(Error::InvalidDesign(
            "every replication failed to fit".into(),
        ));
    }
    let betas: Vec<f64> = reps.iter().map(|r| r.beta_hat).collect();
    let (mean_beta, sd_beta) = mean_sd(&betas);
    let var_beta = sd_beta * sd_beta;
    let n_var_beta = spec.n as f64 * var_beta;
    let z = normal_quantile(1.0 - config.alpha / 2.0);

    let estimators = config
        .estimators
        .iter()
        .enumerate()
        .map(|(e, &method)| {
            let mut omegas = Vec::new();
            let mut rejections = 0usize;
            for r in &reps {
                if let Some(o) = r.omega[e] {
                    omegas.push(o);
                    let se = (o / spec.n as f64).sqrt();
                    if ((r.beta_hat - spec.beta) / se).abs() > z {
                        rejections += 1;
                    }
                }
            }
            let (mean_omega, sd_omega) = mean_sd(&omegas);
            let ok = omegas.len() as f64;
            let rejection_rate = if omegas.is_empty() {
                f64::NAN
            } else {
                rejections as f64 / ok
            };
            let bias_pct = (betas.len() > 1 && !omegas.is_empty())
                .then(|| 100.0 * (mean_omega - n_var_beta) / n_var_beta);
            EstimatorSummary {
                method,
                mean_omega,
                sd_omega,
                bias_pct,
                rejection_rate,
                coverage: 1.0 - rejection_rate,
                failures: reps.len() - omegas.len(),
            }
        })
        .collect();

    let norms: Vec<f64> = reps.iter().filter_map(|r| r.kappa_norm).collect();
    let (kappa_norm_mean, kappa_norm_sd) = if norms.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_sd(&norms);
        (Some(m), s.is_finite().then_some(s))
    };
    Ok(MonteCarloSummary {
        design: *spec,
        reps: config.reps,
        seed: config.seed,
        alpha: config.alpha,
        mean_beta,
        var_beta,
        n_var_beta,
        estimators,
        kappa_norm_mean,
        kappa_norm_sd,
        fit_failures,
        calibration: cal,
    })
}
