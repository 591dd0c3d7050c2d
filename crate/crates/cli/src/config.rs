use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use crve_core::{Method, NormMode, SolverMode, SolverOptions, SystemForm};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "crve",
    version,
    about = "Cluster-robust inference for regressions with many controls"
)]
pub struct Cli {
    /// JSON file with default values for any flag; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    /// Worker threads for Monte Carlo replications.
    #[arg(long, global = true, env = "CRVE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the coefficients of interest and their standard errors.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        infer: InferArgs,
    },
    /// Run a Monte Carlo design.
    Simulate(SimArgs),
    /// Report regularity diagnostics for a dataset without inference.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Compare the correction system against a brute-force Kronecker build.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<String>>,
    /// Cluster column; omit for one observation per cluster.
    #[arg(long)]
    pub cluster: Option<String>,
    /// Categorical columns whose fixed effects are removed by demeaning.
    #[arg(long, value_delimiter = ',')]
    pub absorb: Option<Vec<String>>,
    /// Transform spec file generating additional controls.
    #[arg(long)]
    pub transforms: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct InferArgs {
    /// Comma-separated subset of lz, cr.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SolverArgs {
    /// dense, matrix_free or auto.
    #[arg(long)]
    pub solver: Option<String>,
    /// ordered or collapsed.
    #[arg(long)]
    pub form: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub dense_threshold: Option<usize>,
    /// exact, estimate, auto or off.
    #[arg(long)]
    pub kappa_norm: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SimArgs {
    /// Named grid cell, e.g. table2:G175:K0.201 or table6:G70:n500.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub list_presets: bool,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// many_controls, partially_linear or twoway_fe (without a preset).
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// continuous or discrete.
    #[arg(long)]
    pub controls: Option<String>,
    #[arg(long)]
    pub calibration_draws: Option<usize>,
    /// Comma-separated subset of unfeasible, lz, cr.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Cluster sizes such as 2,2,2, or a single count of equal clusters.
    #[arg(long)]
    pub clusters: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Keys accepted in a config file. Sections mirror the subcommands;
/// top-level keys mirror the global flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: DataArgs,
    pub infer: InferArgs,
    pub simulate: SimArgs,
    pub oracle: OracleArgs,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config '{}': {e}", path.display())))
    }
}

/// Fills every unset field of `$flags` from `$file`.
macro_rules! overlay {
    ($flags:expr, $file:expr, [$($f:ident),*]) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f.clone(); } )*
    };
}

impl DataArgs {
    pub fn merged(mut self, file: &DataArgs) -> Self {
        overlay!(self, file, [input, y, x, w, cluster, absorb, transforms]);
        self
    }
}

impl SolverArgs {
    pub fn merged(mut self, file: &SolverArgs) -> Self {
        overlay!(
            self,
            file,
            [solver, form, tol, max_iter, dense_threshold, kappa_norm]
        );
        self
    }

    pub fn options(&self, default_form: SystemForm) -> Result<SolverOptions> {
        let mode = match self.solver.as_deref() {
            None | Some("auto") => SolverMode::Auto,
            Some("dense") => SolverMode::Dense,
            Some("matrix_free") | Some("cg") => SolverMode::MatrixFree,
            Some(other) => return Err(CliError::Config(format!("unknown solver '{other}'"))),
        };
        let form = match self.form.as_deref() {
            None => default_form,
            Some("ordered") => SystemForm::Ordered,
            Some("collapsed") => SystemForm::Collapsed,
            Some(other) => return Err(CliError::Config(format!("unknown system form '{other}'"))),
        };
        let base = SolverOptions::default();
        let tol = self.tol.unwrap_or(base.tol);
        if !(tol > 0.0 && tol < 1.0) {
            return Err(CliError::Config(format!("tol = {tol} is not in (0, 1)")));
        }
        Ok(SolverOptions {
            mode,
            form,
            tol,
            max_iter: self.max_iter.or(base.max_iter),
            dense_threshold: self.dense_threshold.unwrap_or(base.dense_threshold),
        })
    }

    pub fn norm_mode(&self, default: Option<NormMode>) -> Result<Option<NormMode>> {
        Ok(match self.kappa_norm.as_deref() {
            None => default,
            Some("off") => None,
            Some("exact") => Some(NormMode::Exact),
            Some("estimate") => Some(NormMode::Estimate),
            Some("auto") => Some(NormMode::Auto),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown kappa-norm mode '{other}'"
                )))
            }
        })
    }
}

impl InferArgs {
    pub fn merged(mut self, file: &InferArgs) -> Self {
        overlay!(self, file, [estimators, alpha]);
        self.solver = self.solver.merged(&file.solver);
        self
    }
}

impl SimArgs {
    pub fn merged(mut self, file: &SimArgs) -> Self {
        overlay!(
            self,
            file,
            [
                preset,
                reps,
                seed,
                variant,
                n,
                clusters,
                k,
                rho,
                controls,
                calibration_draws,
                estimators,
                alpha
            ]
        );
        self.list_presets |= file.list_presets;
        self.solver = self.solver.merged(&file.solver);
        self
    }
}

impl OracleArgs {
    pub fn merged(mut self, file: &OracleArgs) -> Self {
        overlay!(self, file, [n, clusters, k, seed]);
        self
    }
}

pub fn alpha(value: Option<f64>) -> Result<f64> {
    let a = value.unwrap_or(0.05);
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(CliError::Config(format!("alpha = {a} is not in (0, 1)")))
    }
}

pub fn methods(
    names: &Option<Vec<String>>,
    default: &[Method],
    allowed: &[Method],
) -> Result<Vec<Method>> {
    let Some(names) = names else {
        return Ok(default.to_vec());
    };
    let mut out = Vec::new();
    for name in names {
        let m: Method = name
            .parse()
            .map_err(|e: crve_core::Error| CliError::Config(e.to_string()))?;
        if !allowed.contains(&m) {
            return Err(CliError::Config(format!(
                "estimator '{m}' is not available here"
            )));
        }
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no estimators requested".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = serde_json::from_str(
            r#"{"format": "json", "data": {"y": "crime", "x": ["abortion"], "cluster": "state"},
                "infer": {"alpha": 0.1, "solver": "dense"}}"#,
        )
        .unwrap();
        let flags = DataArgs {
            y: Some("other".into()),
            ..Default::default()
        };
        let data = flags.merged(&file.data);
        assert_eq!(data.y.as_deref(), Some("other"));
        assert_eq!(data.cluster.as_deref(), Some("state"));
        let infer = InferArgs::default().merged(&file.infer);
        assert_eq!(infer.alpha, Some(0.1));
        assert_eq!(
            infer.solver.options(SystemForm::Ordered).unwrap().mode,
            SolverMode::Dense
        );
        assert_eq!(file.format, Some(Format::Json));
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"data": {"why": "crime"}}"#).is_err());
        assert!(alpha(Some(1.5)).is_err());
        let bad = SolverArgs {
            solver: Some("lu".into()),
            ..Default::default()
        };
        assert!(bad.options(SystemForm::Ordered).is_err());
        assert!(methods(&Some(vec!["unf".into()]), &[], &[Method::Lz, Method::Cr]).is_err());
        assert_eq!(
            methods(
                &Some(vec!["cr".into(), "lz".into(), "cr".into()]),
                &[],
                &[Method::Lz, Method::Cr]
            )
            .unwrap(),
            [Method::Cr, Method::Lz]
        );
    }
}
