use crve_core::oracle;
use crve_core::simulation::stream_rng;
use crve_core::{
    assumption_diagnostics, build_kappa_system, build_pair_index, compute_annihilator, fit_ols,
    infer, kappa_inf_norm, list_presets, partition_clusters, resolve_preset, run_monte_carlo,
    sigma_cr_with_system, sigma_general, sigma_lz, AnnihilatorOptions, ControlKind, Dataset,
    DesignSpec, Mat, Method, MonteCarloConfig, NormMode, PairRestriction, SolverMode,
    SolverOptions, SystemForm, Variant,
};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{self, DataArgs, InferArgs, OracleArgs, SimArgs};
use crate::error::{CliError, Result};
use crate::io::Table;
use crate::report::{
    DiagnoseReport, EstimateReport, FitReport, OracleReport, SimulateReport, SCHEMA_VERSION,
};
use crate::transform::{absorb, apply_transforms, TransformSpec};

/// Largest sample for which the oracle check builds the n² × n² Kronecker
/// product.
pub const ORACLE_MAX_N: usize = 16;

/// Tolerances of the oracle check: entrywise for the systems, relative to
/// the largest meat entry for the meat.
pub const ORACLE_TOL_SYSTEM: f64 = 1e-12;
pub const ORACLE_TOL_SIGMA: f64 = 1e-10;

/// A dataset assembled from a CSV file, with the bookkeeping the reports
/// need.
pub struct Prepared {
    pub data: Dataset,
    pub absorbed: Vec<String>,
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

pub fn build_dataset(args: &DataArgs) -> Result<Prepared> {
    let input = required(&args.input, "input")?;
    let y_name = required(&args.y, "y")?;
    let x_names = required(&args.x, "x")?.clone();
    if x_names.is_empty() {
        return Err(CliError::Config("--x names no columns".into()));
    }
    let mut table = Table::read(input)?;
    let spec = match &args.transforms {
        Some(path) => TransformSpec::read(path)?,
        None => TransformSpec::default(),
    };
    let mut w_names = args.w.clone().unwrap_or_default();
    w_names.extend(apply_transforms(&mut table, &spec)?);

    let n = table.n_rows();
    let cluster_id = match &args.cluster {
        Some(c) => table.categorical(c)?,
        None => (0..n as i64).collect(),
    };

    let mut absorbed = args.absorb.clone().unwrap_or_default();
    for by in spec.absorbed() {
        if !absorbed.contains(&by) {
            absorbed.push(by);
        }
    }
    let groups = absorbed
        .iter()
        .map(|c| table.categorical(c))
        .collect::<Result<Vec<_>>>()?;

    let mut columns = Vec::with_capacity(1 + x_names.len() + w_names.len());
    columns.push(table.numeric(y_name)?);
    for name in x_names.iter().chain(&w_names) {
        columns.push(table.numeric(name)?);
    }
    absorb(&mut columns, &groups)?;

    let mut columns = columns.into_iter();
    let y = columns.next().expect("y column");
    let mut take = |count: usize| {
        let cols: Vec<Vec<f64>> = columns.by_ref().take(count).collect();
        Mat::from_fn(n, count, |i, j| cols[j][i])
    };
    let x = take(x_names.len());
    let w = take(w_names.len());
    let data = Dataset::with_names(y, x, w, cluster_id, x_names, w_names)?;
    Ok(Prepared { data, absorbed })
}

pub fn cmd_fit(data_args: &DataArgs, infer_args: &InferArgs) -> Result<FitReport> {
    let methods = config::methods(
        &infer_args.estimators,
        &[Method::Lz, Method::Cr],
        &[Method::Lz, Method::Cr],
    )?;
    let alpha = config::alpha(infer_args.alpha)?;
    let opts = infer_args.solver.options(SystemForm::Collapsed)?;
    let norm = infer_args.solver.norm_mode(Some(NormMode::Auto))?;
    let Prepared { data, absorbed } = build_dataset(data_args)?;

    let op = compute_annihilator(data.w.as_ref(), AnnihilatorOptions::default())?;
    let fit = fit_ols(&data, &op)?;
    let partition = partition_clusters(&data.cluster_id);
    let diagnostics = assumption_diagnostics(&op, &fit, &partition);

    let mut estimates = Vec::new();
    for method in methods {
        let var = match method {
            Method::Lz => sigma_lz(&fit, &partition)?,
            _ => {
                let idx = build_pair_index(&partition, &PairRestriction::None)?;
                let sys = build_kappa_system(&op, &idx, &opts)?;
                let mut var = sigma_cr_with_system(&fit, &sys, &opts)?;
                if let Some(mode) = norm {
                    var.kappa_inf_norm = Some(kappa_inf_norm(&sys, mode, &opts)?);
                }
                var
            }
        };
        let inference = infer(&fit, &var, alpha)?;
        estimates.push(EstimateReport {
            inference,
            min_eigenvalue: var.min_eigenvalue,
            solver: var.solver_info,
            kappa_inf_norm: var.kappa_inf_norm,
        });
    }
    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        command: "fit".into(),
        n: data.n(),
        k: data.k(),
        x_names: data.x_names.clone(),
        dropped_controls: op
            .dropped_columns()
            .iter()
            .map(|&j| data.w_names[j].clone())
            .collect(),
        absorbed,
        diagnostics,
        estimates,
    })
}

pub fn cmd_diagnose(data_args: &DataArgs) -> Result<DiagnoseReport> {
    let Prepared { data, absorbed } = build_dataset(data_args)?;
    let op = compute_annihilator(data.w.as_ref(), AnnihilatorOptions::default())?;
    let fit = fit_ols(&data, &op)?;
    let partition = partition_clusters(&data.cluster_id);
    Ok(DiagnoseReport {
        schema_version: SCHEMA_VERSION,
        command: "diagnose".into(),
        k: data.k(),
        dropped_controls: op
            .dropped_columns()
            .iter()
            .map(|&j| data.w_names[j].clone())
            .collect(),
        absorbed,
        diagnostics: assumption_diagnostics(&op, &fit, &partition),
    })
}

fn explicit_design(args: &SimArgs) -> Result<DesignSpec> {
    let n = *required(&args.n, "n")?;
    let clusters = *required(&args.clusters, "clusters")?;
    let k = *required(&args.k, "k")?;
    let kind = match args.controls.as_deref() {
        None | Some("continuous") => ControlKind::Continuous,
        Some("discrete") => ControlKind::Discrete,
        Some(other) => return Err(CliError::Config(format!("unknown control kind '{other}'"))),
    };
    let mut spec = match args.variant.as_deref() {
        None | Some("many_controls") => DesignSpec::many_controls(n, clusters, k, kind),
        Some("partially_linear") => DesignSpec::partially_linear(n, clusters, k),
        Some("twoway_fe") => DesignSpec::twoway_fe(n, clusters, k),
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown design variant '{other}'"
            )))
        }
    };
    if let Some(rho) = args.rho {
        spec.rho = rho;
    }
    spec.validate()?;
    Ok(spec)
}

/// Runs a preset or an explicit design. Returns `None` after listing the
/// presets.
pub fn cmd_simulate(args: &SimArgs) -> Result<Option<SimulateReport>> {
    if args.list_presets {
        return Ok(None);
    }
    let (spec, kappa_preset) = match &args.preset {
        Some(name) => {
            let p = resolve_preset(name).map_err(|e| CliError::Config(e.to_string()))?;
            (p.spec, p.kappa_norm)
        }
        None => (explicit_design(args)?, false),
    };
    let all = [Method::Unfeasible, Method::Lz, Method::Cr];
    let estimators = if kappa_preset && args.estimators.is_none() {
        Vec::new()
    } else {
        config::methods(&args.estimators, &all, &all)?
    };
    let default_norm = kappa_preset.then_some(NormMode::Exact);
    let mut solver = args.solver.options(SystemForm::Collapsed)?;
    if kappa_preset && args.solver.solver.is_none() {
        solver.mode = SolverMode::Dense;
    }
    let base = MonteCarloConfig::default();
    let cfg = MonteCarloConfig {
        reps: args.reps.unwrap_or(base.reps),
        seed: args.seed.unwrap_or(base.seed),
        alpha: config::alpha(args.alpha)?,
        estimators,
        parallel: true,
        solver,
        kappa_norm: args.solver.norm_mode(default_norm)?,
        calibration_draws: args.calibration_draws.unwrap_or(base.calibration_draws),
    };
    if spec.variant == Variant::TwowayFe && args.controls.is_some() {
        log::warn!("--controls is ignored by the two-way design");
    }
    let summary = run_monte_carlo(&spec, &cfg)?;
    Ok(Some(SimulateReport {
        schema_version: SCHEMA_VERSION,
        command: "simulate".into(),
        preset: args.preset.clone(),
        summary,
    }))
}

pub fn preset_listing() -> String {
    let mut out = list_presets().join("\n");
    out.push('\n');
    out
}

/// Parses `"2,3,3"` as cluster sizes or `"4"` as a count of clusters of
/// near-equal size.
fn cluster_sizes(spec: &str, n: Option<usize>) -> Result<Vec<usize>> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Config(format!("cannot parse cluster spec '{spec}'")))?;
    if parts.contains(&0) {
        return Err(CliError::Config("cluster sizes must be positive".into()));
    }
    if parts.len() > 1 {
        let total: usize = parts.iter().sum();
        if n.is_some_and(|n| n != total) {
            return Err(CliError::Config(format!(
                "cluster sizes sum to {total}, not n = {}",
                n.unwrap_or(0)
            )));
        }
        return Ok(parts);
    }
    let g = parts[0];
    let n = n.unwrap_or(2 * g);
    if g > n {
        return Err(CliError::Config(format!(
            "{g} clusters for n = {n} observations"
        )));
    }
    Ok((0..g).map(|c| n / g + usize::from(c < n % g)).collect())
}

pub fn cmd_oracle_check(args: &OracleArgs) -> Result<OracleReport> {
    let sizes = cluster_sizes(args.clusters.as_deref().unwrap_or("4"), args.n.or(Some(8)))?;
    let n: usize = sizes.iter().sum();
    if n > ORACLE_MAX_N {
        return Err(CliError::Config(format!(
            "n = {n} exceeds the oracle limit of {ORACLE_MAX_N}"
        )));
    }
    let k = args.k.unwrap_or(2);
    let seed = args.seed.unwrap_or(1);
    if k + 2 > n {
        return Err(CliError::Config(format!(
            "K = {k} leaves too few degrees of freedom at n = {n}"
        )));
    }

    let mut rng = stream_rng(seed, 0);
    let mut draw = || rng.sample::<f64, _>(StandardNormal);
    let w = Mat::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { draw() });
    let x = Mat::from_fn(n, 1, |_, _| draw());
    let y: Vec<f64> = (0..n).map(|_| draw()).collect();
    let cluster_id: Vec<i64> = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g as i64, s))
        .collect();
    let data = Dataset::new(y, x, w, cluster_id)?;

    let op = compute_annihilator(data.w.as_ref(), AnnihilatorOptions::default())?;
    let fit = fit_ols(&data, &op)?;
    let partition = partition_clusters(&data.cluster_id);
    let idx = build_pair_index(&partition, &PairRestriction::None)?;
    let opts = SolverOptions {
        mode: SolverMode::Dense,
        form: SystemForm::Ordered,
        ..Default::default()
    };
    let sys = build_kappa_system(&op, &idx, &opts)?;
    let a = sys.materialize();

    let m = oracle::explicit_annihilator(data.w.as_ref());
    let reference = oracle::kronecker_system(m.as_ref(), &idx.as_tuples());
    let max_diff_system = max_abs_diff(&a, &reference);
    let max_diff_hadamard = sizes
        .iter()
        .all(|&s| s == 1)
        .then(|| max_abs_diff(&a, &oracle::hadamard_square(m.as_ref())));

    // Small designs can make the system genuinely singular; the entrywise
    // comparisons above still apply, the meat comparison does not.
    let max_diff_sigma = match sigma_cr_with_system(&fit, &sys, &opts) {
        Ok(cr) => {
            let general = sigma_general(
                &fit,
                &idx,
                oracle::explicit_inverse(reference.as_ref()).as_ref(),
            )?;
            let scale = (0..cr.sigma.nrows())
                .flat_map(|i| (0..cr.sigma.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| cr.sigma[(i, j)].abs())
                .fold(f64::MIN_POSITIVE, f64::max);
            Some(max_abs_diff(&cr.sigma, &general.sigma) / scale)
        }
        Err(e) if e.is_numerical() => {
            log::warn!("meat comparison skipped: {e}");
            None
        }
        Err(e) => return Err(e.into()),
    };

    let passed = max_diff_system <= ORACLE_TOL_SYSTEM
        && max_diff_hadamard.is_none_or(|h| h <= ORACLE_TOL_SYSTEM)
        && max_diff_sigma.is_none_or(|d| d <= ORACLE_TOL_SIGMA);
    Ok(OracleReport {
        schema_version: SCHEMA_VERSION,
        command: "oracle-check".into(),
        n,
        cluster_sizes: sizes,
        k,
        seed,
        max_diff_system,
        max_diff_hadamard,
        max_diff_sigma,
        passed,
    })
}

fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    (0..a.nrows())
        .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (a[(i, j)] - b[(i, j)]).abs())
        .fold(0.0, f64::max)
}
