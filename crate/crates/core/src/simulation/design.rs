use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::basis::{power_basis_prefix, MAX_BASIS};
use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ManyControls,
    PartiallyLinear,
    TwowayFe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    /// Uniform(−1, 1) coordinates.
    #[default]
    Continuous,
    /// `1{N(0,1) ≥ 1}` coordinates.
    Discrete,
}

/// How panel observations are matched to categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DummyAssignment {
    /// Flattened index `i·T + t` modulo the number of categories.
    #[default]
    RoundRobin,
    Random,
}

/// One of the three simulation designs.
///
/// Clusters are balanced contiguous blocks of `n / clusters` observations;
/// in the panel design a cluster is an individual observed `T = n / clusters`
/// times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub variant: Variant,
    pub n: usize,
    pub clusters: usize,
    /// Many controls: columns of w including the intercept. Partially
    /// linear: size of the power basis. Panel: number of categories `N_d`.
    pub k: usize,
    pub rho: f64,
    pub beta: f64,
    #[serde(default)]
    pub control_kind: ControlKind,
    #[serde(default)]
    pub assignment: DummyAssignment,
}

impl DesignSpec {
    pub fn many_controls(n: usize, clusters: usize, k: usize, control_kind: ControlKind) -> Self {
        Self {
            variant: Variant::ManyControls,
            n,
            clusters,
            k,
            rho: 0.3,
            beta: 1.0,
            control_kind,
            assignment: DummyAssignment::RoundRobin,
        }
    }

    pub fn partially_linear(n: usize, clusters: usize, k: usize) -> Self {
        Self {
            variant: Variant::PartiallyLinear,
            ..Self::many_controls(n, clusters, k, ControlKind::Continuous)
        }
    }

    pub fn twoway_fe(n: usize, individuals: usize, categories: usize) -> Self {
        Self {
            variant: Variant::TwowayFe,
            ..Self::many_controls(n, individuals, categories, ControlKind::Continuous)
        }
    }

    pub fn cluster_size(&self) -> usize {
        self.n / self.clusters.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDesign(m));
        if self.n == 0 || self.clusters == 0 {
            return bad("n and the number of clusters must be positive".into());
        }
        if self.n % self.clusters != 0 {
            return bad(format!(
                "n = {} is not divisible by G = {}",
                self.n, self.clusters
            ));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad(format!("rho = {} is not in (-1, 1)", self.rho));
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        match self.variant {
            Variant::ManyControls if self.k == 0 => {
                bad("at least the intercept control is required".into())
            }
            Variant::ManyControls if self.k >= self.n => bad(format!(
                "K = {} controls leave no degrees of freedom at n = {}",
                self.k, self.n
            )),
            Variant::PartiallyLinear if self.k == 0 || self.k > MAX_BASIS => {
                Err(Error::UnsupportedBasis(self.k))
            }
            Variant::TwowayFe if self.cluster_size() < 2 => {
                bad("the within transformation needs at least two periods per individual".into())
            }
            Variant::TwowayFe if self.k == 0 => bad("at least one category is required".into()),
            _ => Ok(()),
        }
    }
}

/// Scale constants making the regressor and the first error of each cluster
/// unit-variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kappa_x: f64,
    pub kappa_u1: f64,
    /// Partially linear design only; zero elsewhere.
    pub kappa_v: f64,
}

/// `a` clamped to `[−2, 2]`.
pub fn t_fn(a: f64) -> f64 {
    a.clamp(-2.0, 2.0)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_uniform() -> Uniform<f64> {
    Uniform::new(-1.0, 1.0).expect("valid bounds")
}

fn draw_controls<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R, out: &mut [f64]) {
    let u = unit_uniform();
    out[0] = 1.0;
    for v in out.iter_mut().skip(1) {
        *v = match spec.control_kind {
            ControlKind::Continuous => u.sample(rng),
            ControlKind::Discrete => f64::from(u8::from(normal(rng) >= 1.0)),
        };
    }
}

fn draw_z<R: Rng + ?Sized>(rng: &mut R) -> [f64; 6] {
    let u = unit_uniform();
    std::array::from_fn(|_| u.sample(rng))
}

fn norm_root(z: &[f64; 6]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt().sqrt()
}

/// Estimates the scale constants by pre-simulating `draws` observations.
pub fn calibrate_constants<R: Rng + ?Sized>(
    spec: &DesignSpec,
    rng: &mut R,
    draws: usize,
) -> Calibration {
    assert!(draws > 1, "calibration needs at least two draws");
    let m = draws as f64;
    match spec.variant {
        Variant::ManyControls => {
            let mut w = vec![0.0; spec.k];
            let sums: Vec<f64> = (0..draws)
                .map(|_| {
                    draw_controls(spec, rng, &mut w);
                    w.iter().sum()
                })
                .collect();
            let kappa_x = 1.0 / (1.0 + sums.iter().map(|s| s * s).sum::<f64>() / m);
            let second: f64 = sums
                .iter()
                .map(|&s| {
                    let x = (kappa_x * (1.0 + s * s)).sqrt() * normal(rng);
                    (t_fn(x) + s).powi(2)
                })
                .sum::<f64>()
                / m;
            Calibration {
                kappa_x,
                kappa_u1: 1.0 / (1.0 + second),
                kappa_v: 0.0,
            }
        }
        Variant::PartiallyLinear => {
            let zs: Vec<[f64; 6]> = (0..draws).map(|_| draw_z(rng)).collect();
            let h: Vec<f64> = zs.iter().map(|z| norm_root(z).exp()).collect();
            let mean_h = h.iter().sum::<f64>() / m;
            let var_h = h.iter().map(|v| (v - mean_h).powi(2)).sum::<f64>() / (m - 1.0);
            let mean_s2 = zs
                .iter()
                .map(|z| z.iter().sum::<f64>().powi(2))
                .sum::<f64>()
                / m;
            let kappa_v = ((1.0 - var_h) / (1.0 + mean_s2)).max(0.0);
            let second: f64 = zs
                .iter()
                .zip(&h)
                .map(|(z, &hz)| {
                    let s: f64 = z.iter().sum();
                    let x = hz + (kappa_v * (1.0 + s * s)).sqrt() * normal(rng);
                    (t_fn(x) + s).powi(2)
                })
                .sum::<f64>()
                / m;
            Calibration {
                kappa_x: 0.0,
                kappa_u1: 1.0 / (1.0 + second),
                kappa_v,
            }
        }
        Variant::TwowayFe => {
            let sums: Vec<f64> = (0..draws).map(|_| draw_z(rng).iter().sum()).collect();
            let kappa_x = 1.0 / (1.0 + sums.iter().map(|s| s * s).sum::<f64>() / m);
            let second: f64 = sums
                .iter()
                .map(|&s| {
                    let x = (kappa_x * (1.0 + s * s)).sqrt() * normal(rng);
                    (t_fn(x) + s).powi(2)
                })
                .sum::<f64>()
                / m;
            Calibration {
                kappa_x,
                kappa_u1: 1.0 / (1.0 + second),
                kappa_v: 0.0,
            }
        }
    }
}

/// A generated sample together with the structural errors of the estimated
/// model.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub true_errors: Vec<f64>,
}

/// Within-cluster error recursion: the first error has variance
/// `κ_u1 (1 + (t(x₁) + s₁)²)`; later errors follow `±ρ U_{prev} + ε` with the
/// sign taken from `switch`.
fn cluster_errors<R: Rng + ?Sized>(
    rng: &mut R,
    rho: f64,
    kappa_u1: f64,
    first_x: f64,
    first_sum: f64,
    switch: &[bool],
) -> Vec<f64> {
    let mut u = Vec::with_capacity(switch.len());
    let sd1 = (kappa_u1 * (1.0 + (t_fn(first_x) + first_sum).powi(2))).sqrt();
    u.push(sd1 * normal(rng));
    for &up in &switch[1..] {
        let prev = *u.last().expect("non-empty");
        let r = if up { rho } else { -rho };
        u.push(r * prev + normal(rng));
    }
    u
}

fn cluster_labels(spec: &DesignSpec) -> Vec<i64> {
    let s = spec.cluster_size();
    (0..spec.n).map(|i| (i / s) as i64).collect()
}

pub fn gen_many_controls<R: Rng + ?Sized>(
    spec: &DesignSpec,
    cal: &Calibration,
    rng: &mut R,
) -> Result<Simulated> {
    if spec.variant != Variant::ManyControls {
        return Err(Error::InvalidDesign(
            "expected the many-controls design".into(),
        ));
    }
    spec.validate()?;
    let (n, k, s) = (spec.n, spec.k, spec.cluster_size());
    let mut w = Mat::<f64>::zeros(n, k);
    let mut x = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut row = vec![0.0; k];
    for g in 0..spec.clusters {
        let mut sums = Vec::with_capacity(s);
        for p in 0..s {
            let i = g * s + p;
            draw_controls(spec, rng, &mut row);
            for (c, &v) in row.iter().enumerate() {
                w[(i, c)] = v;
            }
            let sum: f64 = row.iter().sum();
            x[i] = (cal.kappa_x * (1.0 + sum * sum)).sqrt() * normal(rng);
            sums.push(sum);
        }
        let block = &x[g * s..(g + 1) * s];
        let switch: Vec<bool> = block.iter().map(|&v| v >= 0.0).collect();
        let e = cluster_errors(rng, spec.rho, cal.kappa_u1, block[0], sums[0], &switch);
        u[g * s..(g + 1) * s].copy_from_slice(&e);
    }
    let y: Vec<f64> = (0..n).map(|i| spec.beta * x[i] + u[i]).collect();
    let data = Dataset::with_names(
        y,
        Mat::from_fn(n, 1, |i, _| x[i]),
        w,
        cluster_labels(spec),
        vec!["x".into()],
        (1..=k).map(|c| format!("w{c}")).collect(),
    )?;
    Ok(Simulated {
        data,
        true_errors: u,
    })
}

pub fn gen_partially_linear<R: Rng + ?Sized>(
    spec: &DesignSpec,
    cal: &Calibration,
    rng: &mut R,
) -> Result<Simulated> {
    if spec.variant != Variant::PartiallyLinear {
        return Err(Error::InvalidDesign(
            "expected the partially linear design".into(),
        ));
    }
    spec.validate()?;
    let (n, k, s) = (spec.n, spec.k, spec.cluster_size());
    let mut w = Mat::<f64>::zeros(n, k);
    let mut x = vec![0.0; n];
    let mut gz = vec![0.0; n];
    let mut u = vec![0.0; n];
    for g in 0..spec.clusters {
        let mut sums = Vec::with_capacity(s);
        let mut switch = Vec::with_capacity(s);
        for p in 0..s {
            let i = g * s + p;
            let z = draw_z(rng);
            let root = norm_root(&z);
            let sum: f64 = z.iter().sum();
            gz[i] = (-root).exp();
            x[i] = root.exp() + (cal.kappa_v * (1.0 + sum * sum)).sqrt() * normal(rng);
            for (c, v) in power_basis_prefix(&z, k)?.into_iter().enumerate() {
                w[(i, c)] = v;
            }
            sums.push(sum);
            switch.push(z[0] >= 0.0);
        }
        let e = cluster_errors(rng, spec.rho, cal.kappa_u1, x[g * s], sums[0], &switch);
        u[g * s..(g + 1) * s].copy_from_slice(&e);
    }
    let y: Vec<f64> = (0..n).map(|i| spec.beta * x[i] + gz[i] + u[i]).collect();
    let data = Dataset::with_names(
        y,
        Mat::from_fn(n, 1, |i, _| x[i]),
        w,
        cluster_labels(spec),
        vec!["x".into()],
        (1..=k).map(|c| format!("p{c}")).collect(),
    )?;
    Ok(Simulated {
        data,
        true_errors: u,
    })
}

/// Panel with individual and category effects set to zero, returned after
/// the within transformation. The controls are the demeaned category
/// indicators without the last category; the true errors are the demeaned
/// structural errors.
pub fn gen_twoway_fe<R: Rng + ?Sized>(
    spec: &DesignSpec,
    cal: &Calibration,
    rng: &mut R,
) -> Result<Simulated> {
    if spec.variant != Variant::TwowayFe {
        return Err(Error::InvalidDesign(
            "expected the two-way fixed effects design".into(),
        ));
    }
    spec.validate()?;
    let (n, t_len, n_d) = (spec.n, spec.cluster_size(), spec.k);
    let mut x = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut cat = vec![0usize; n];
    for i in 0..spec.clusters {
        let mut sums = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let f = i * t_len + t;
            let sum: f64 = draw_z(rng).iter().sum();
            x[f] = (cal.kappa_x * (1.0 + sum * sum)).sqrt() * normal(rng);
            sums.push(sum);
            cat[f] = match spec.assignment {
                DummyAssignment::RoundRobin => f % n_d,
                DummyAssignment::Random => rng.random_range(0..n_d),
            };
        }
        let block = &x[i * t_len..(i + 1) * t_len];
        let switch: Vec<bool> = block.iter().map(|&v| v >= 0.0).collect();
        let e = cluster_errors(rng, spec.rho, cal.kappa_u1, block[0], sums[0], &switch);
        u[i * t_len..(i + 1) * t_len].copy_from_slice(&e);
    }
    let y: Vec<f64> = (0..n).map(|f| spec.beta * x[f] + u[f]).collect();
    let demean = |v: &[f64]| -> Vec<f64> {
        let mut out = v.to_vec();
        for block in out.chunks_mut(t_len) {
            let mean = block.iter().sum::<f64>() / t_len as f64;
            block.iter_mut().for_each(|b| *b -= mean);
        }
        out
    };
    let k = n_d - 1;
    let mut w = Mat::<f64>::zeros(n, k);
    for i in 0..spec.clusters {
        let rows = i * t_len..(i + 1) * t_len;
        let mut counts = vec![0usize; n_d];
        for f in rows.clone() {
            counts[cat[f]] += 1;
        }
        for f in rows {
            for (c, &cnt) in counts.iter().enumerate().take(k) {
                let indicator = if cat[f] == c { 1.0 } else { 0.0 };
                if cnt > 0 {
                    w[(f, c)] = indicator - cnt as f64 / t_len as f64;
                }
            }
        }
    }
    let x_t = demean(&x);
    let data = Dataset::with_names(
        demean(&y),
        Mat::from_fn(n, 1, |f, _| x_t[f]),
        w,
        cluster_labels(spec),
        vec!["x".into()],
        (1..=k).map(|c| format!("d{c}")).collect(),
    )?;
    Ok(Simulated {
        data,
        true_errors: demean(&u),
    })
}

/// Dispatches on the design variant.
pub fn generate<R: Rng + ?Sized>(
    spec: &DesignSpec,
    cal: &Calibration,
    rng: &mut R,
) -> Result<Simulated> {
    match spec.variant {
        Variant::ManyControls => gen_many_controls(spec, cal, rng),
        Variant::PartiallyLinear => gen_partially_linear(spec, cal, rng),
        Variant::TwowayFe => gen_twoway_fe(spec, cal, rng),
    }
}
