use std::fmt::Write as _;

use crve_core::simulation::MonteCarloSummary;
use crve_core::{Diagnostics, InferenceReport, SolverInfo};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{CliError, Result};

/// Bumped whenever a JSON field is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    #[serde(flatten)]
    pub inference: InferenceReport,
    /// Smallest eigenvalue of the meat matrix.
    pub min_eigenvalue: f64,
    pub solver: Option<SolverInfo>,
    pub kappa_inf_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub command: String,
    pub n: usize,
    pub k: usize,
    pub x_names: Vec<String>,
    /// Controls dropped as collinear, by name.
    pub dropped_controls: Vec<String>,
    pub absorbed: Vec<String>,
    pub diagnostics: Diagnostics,
    pub estimates: Vec<EstimateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub schema_version: u32,
    pub command: String,
    pub k: usize,
    pub dropped_controls: Vec<String>,
    pub absorbed: Vec<String>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub command: String,
    pub preset: Option<String>,
    pub summary: MonteCarloSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub command: String,
    pub n: usize,
    pub cluster_sizes: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    /// Largest entrywise gap between the correction system and the explicit
    /// Kronecker build.
    pub max_diff_system: f64,
    /// Gap to the entrywise square of the residual maker; singleton
    /// clusters only.
    pub max_diff_hadamard: Option<f64>,
    /// Gap between the corrected meat and the general form evaluated at the
    /// explicit inverse; `None` when the system is singular.
    pub max_diff_sigma: Option<f64>,
    pub passed: bool,
}

/// `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), sig6)
}

/// Right-aligned table with a header row.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv_rows(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn diagnostics_text(d: &Diagnostics, out: &mut String) {
    let _ = writeln!(out, "observations        {}", d.n);
    let _ = writeln!(out, "clusters            {}", d.n_clusters);
    let _ = writeln!(out, "controls (K_eff)    {}", d.k_eff);
    let _ = writeln!(out, "K_eff / n           {}", sig6(d.control_ratio));
    let _ = writeln!(out, "min M_ii            {}", sig6(d.min_m_diag));
    let _ = writeln!(out, "max |v_i| / sqrt n  {}", sig6(d.max_vhat_norm));
    let _ = writeln!(out, "min eig Gamma       {}", sig6(d.lambda_min_gram));
}

fn dropped_text(dropped: &[String], absorbed: &[String], out: &mut String) {
    if !absorbed.is_empty() {
        let _ = writeln!(out, "absorbed            {}", absorbed.join(", "));
    }
    if !dropped.is_empty() {
        let _ = writeln!(out, "dropped (collinear) {}", dropped.join(", "));
    }
}

impl FitReport {
    pub fn render(&self, format: Format) -> Result<String> {
        let header = [
            "coefficient",
            "estimator",
            "estimate",
            "std_error",
            "ci_lower",
            "ci_upper",
            "p_value",
        ];
        let mut rows = Vec::new();
        for e in &self.estimates {
            let r = &e.inference;
            for (j, name) in self.x_names.iter().enumerate() {
                let cells = [
                    r.beta_hat[j],
                    r.std_errors[j],
                    r.ci_lower[j],
                    r.ci_upper[j],
                    r.p_values[j],
                ];
                let mut row = vec![name.clone(), r.method.to_string()];
                row.extend(cells.iter().map(|&v| {
                    if format == Format::Csv {
                        format!("{v}")
                    } else {
                        sig6(v)
                    }
                }));
                rows.push(row);
            }
        }
        match format {
            Format::Json => json(self),
            Format::Csv => csv_rows(&header, &rows),
            Format::Text => {
                let mut out = String::new();
                diagnostics_text(&self.diagnostics, &mut out);
                dropped_text(&self.dropped_controls, &self.absorbed, &mut out);
                out.push('\n');
                out.push_str(&table(&header, &rows));
                for e in &self.estimates {
                    let mut notes = Vec::new();
                    if let Some(s) = &e.solver {
                        notes.push(format!(
                            "{:?}/{:?} system of dimension {}, {} iterations, residual {}",
                            s.storage,
                            s.form,
                            s.dimension,
                            s.iterations,
                            sig6(s.residual_norm)
                        ));
                    }
                    if let Some(k) = e.kappa_inf_norm {
                        notes.push(format!("kappa inf-norm {}", sig6(k)));
                    }
                    if e.min_eigenvalue < 0.0 {
                        notes.push(format!(
                            "indefinite meat (min eigenvalue {})",
                            sig6(e.min_eigenvalue)
                        ));
                    }
                    if !notes.is_empty() {
                        let _ = writeln!(
                            out,
                            "{}: {}",
                            e.inference.method,
                            notes.join("; ").to_lowercase()
                        );
                    }
                }
                let _ = writeln!(
                    out,
                    "alpha = {}",
                    sig6(self.estimates.first().map_or(0.05, |e| e.inference.alpha))
                );
                Ok(out)
            }
        }
    }
}

impl DiagnoseReport {
    pub fn render(&self, format: Format) -> Result<String> {
        let d = &self.diagnostics;
        match format {
            Format::Json => json(self),
            Format::Csv => csv_rows(
                &[
                    "n",
                    "n_clusters",
                    "k",
                    "k_eff",
                    "control_ratio",
                    "min_m_diag",
                    "max_vhat_norm",
                    "lambda_min_gram",
                ],
                &[vec![
                    d.n.to_string(),
                    d.n_clusters.to_string(),
                    self.k.to_string(),
                    d.k_eff.to_string(),
                    format!("{}", d.control_ratio),
                    format!("{}", d.min_m_diag),
                    format!("{}", d.max_vhat_norm),
                    format!("{}", d.lambda_min_gram),
                ]],
            ),
            Format::Text => {
                let mut out = String::new();
                diagnostics_text(d, &mut out);
                dropped_text(&self.dropped_controls, &self.absorbed, &mut out);
                Ok(out)
            }
        }
    }
}

impl SimulateReport {
    pub fn render(&self, format: Format) -> Result<String> {
        let s = &self.summary;
        let header = [
            "estimator",
            "mean_omega",
            "sd_omega",
            "bias_pct",
            "rejection",
            "coverage",
            "failures",
        ];
        let fmt = |v: f64| {
            if format == Format::Csv {
                format!("{v}")
            } else {
                sig6(v)
            }
        };
        let rows: Vec<Vec<String>> = s
            .estimators
            .iter()
            .map(|e| {
                vec![
                    e.method.to_string(),
                    fmt(e.mean_omega),
                    fmt(e.sd_omega),
                    e.bias_pct.map_or_else(String::new, fmt),
                    fmt(e.rejection_rate),
                    fmt(e.coverage),
                    e.failures.to_string(),
                ]
            })
            .collect();
        match format {
            Format::Json => json(self),
            Format::Csv => csv_rows(&header, &rows),
            Format::Text => {
                let d = &s.design;
                let mut out = String::new();
                if let Some(p) = &self.preset {
                    let _ = writeln!(out, "preset              {p}");
                }
                let _ = writeln!(
                    out,
                    "design              {:?}, n = {}, G = {}, K = {}, rho = {}",
                    d.variant, d.n, d.clusters, d.k, d.rho
                );
                let _ = writeln!(
                    out,
                    "replications        {} (seed {}, {} fit failures)",
                    s.reps, s.seed, s.fit_failures
                );
                let _ = writeln!(out, "mean beta_hat       {}", sig6(s.mean_beta));
                let _ = writeln!(out, "n Var(beta_hat)     {}", sig6(s.n_var_beta));
                if s.kappa_norm_mean.is_some() {
                    let _ = writeln!(
                        out,
                        "kappa inf-norm      {} (sd {})",
                        opt6(s.kappa_norm_mean),
                        opt6(s.kappa_norm_sd)
                    );
                }
                if !rows.is_empty() {
                    out.push('\n');
                    out.push_str(&table(&header, &rows));
                }
                Ok(out)
            }
        }
    }
}

impl OracleReport {
    pub fn render(&self, format: Format) -> Result<String> {
        let fmt = |v: f64| {
            if format == Format::Csv {
                format!("{v}")
            } else {
                sig6(v)
            }
        };
        match format {
            Format::Json => json(self),
            Format::Csv => csv_rows(
                &[
                    "n",
                    "k",
                    "seed",
                    "max_diff_system",
                    "max_diff_hadamard",
                    "max_diff_sigma",
                    "passed",
                ],
                &[vec![
                    self.n.to_string(),
                    self.k.to_string(),
                    self.seed.to_string(),
                    fmt(self.max_diff_system),
                    self.max_diff_hadamard.map_or_else(String::new, fmt),
                    self.max_diff_sigma.map_or_else(String::new, fmt),
                    self.passed.to_string(),
                ]],
            ),
            Format::Text => {
                let mut out = String::new();
                let sizes: Vec<String> = self.cluster_sizes.iter().map(usize::to_string).collect();
                let _ = writeln!(
                    out,
                    "n = {}, K = {}, cluster sizes {}, seed {}",
                    self.n,
                    self.k,
                    sizes.join(","),
                    self.seed
                );
                let _ = writeln!(
                    out,
                    "system vs Kronecker build   {}",
                    sig6(self.max_diff_system)
                );
                if let Some(h) = self.max_diff_hadamard {
                    let _ = writeln!(out, "system vs M*M entrywise     {}", sig6(h));
                }
                match self.max_diff_sigma {
                    Some(d) => {
                        let _ = writeln!(out, "meat vs explicit inverse    {}", sig6(d));
                    }
                    None => out.push_str("meat vs explicit inverse    skipped, system singular\n"),
                }
                let _ = writeln!(out, "{}", if self.passed { "PASS" } else { "FAIL" });
                Ok(out)
            }
        }
    }
}
