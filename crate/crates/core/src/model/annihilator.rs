use std::sync::OnceLock;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnihilatorOptions {
    /// Columns whose pivoted diagonal of R falls below
    /// `rank_tol * max column norm` are treated as collinear and dropped.
    pub rank_tol: f64,
    /// Largest `n` for which the dense n × n matrix is materialized.
    pub dense_cap: usize,
}

impl Default for AnnihilatorOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            dense_cap: 5000,
        }
    }
}

/// Residual-maker `M = I - W (W'W)^- W'` for a control block, held as an
/// orthonormal basis of the retained columns of `W`.
#[derive(Debug)]
pub struct AnnihilatorOperator {
    n: usize,
    /// n × k_eff orthonormal basis of the column space of W.
    q: Mat<f64>,
    /// k_eff × k_eff upper-triangular factor for the retained, pivoted columns.
    r: Mat<f64>,
    /// Original column index of each retained column, in pivot order.
    retained: Vec<usize>,
    /// Original indices of columns dropped as collinear, ascending.
    dropped: Vec<usize>,
    k_total: usize,
    dense_cap: usize,
    dense: OnceLock<Option<Mat<f64>>>,
}

/// Factorizes the control block with a column-pivoted QR decomposition.
///
/// Collinear columns are dropped (with a warning) rather than rejected.
/// Fails with [`Error::SaturatedControls`] when the retained rank reaches `n`.
pub fn compute_annihilator(
    w: MatRef<'_, f64>,
    opts: AnnihilatorOptions,
) -> Result<AnnihilatorOperator> {
    let n = w.nrows();
    let k = w.ncols();
    if n == 0 {
        return Err(Error::InvalidInput("control block has no rows".into()));
    }
    let max_norm = (0..k)
        .map(|j| (0..n).map(|i| w[(i, j)] * w[(i, j)]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);

    let (q, r, retained) = if k == 0 || max_norm == 0.0 {
        (Mat::zeros(n, 0), Mat::zeros(0, 0), Vec::new())
    } else {
        let qr = w.col_piv_qr();
        let r_full = qr.thin_R();
        let threshold = opts.rank_tol * max_norm;
        let max_rank = n.min(k);
        let mut k_eff = 0;
        while k_eff < max_rank && r_full[(k_eff, k_eff)].abs() > threshold {
            k_eff += 1;
        }
        let (fwd, _) = qr.P().arrays();
        let retained: Vec<usize> = fwd[..k_eff].to_vec();
        let q_full = qr.compute_thin_Q();
        let q = q_full.subcols(0, k_eff).to_owned();
        let r = Mat::from_fn(
            k_eff,
            k_eff,
            |i, j| if i <= j { r_full[(i, j)] } else { 0.0 },
        );
        (q, r, retained)
    };

    let k_eff = retained.len();
    if k_eff >= n {
        return Err(Error::SaturatedControls { rank: k_eff, n });
    }
    let mut dropped: Vec<usize> = (0..k).filter(|j| !retained.contains(j)).collect();
    dropped.sort_unstable();
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} collinear control column(s); effective rank {k_eff} of {k}",
            dropped.len()
        );
    }
    Ok(AnnihilatorOperator {
        n,
        q,
        r,
        retained,
        dropped,
        k_total: k,
        dense_cap: opts.dense_cap,
        dense: OnceLock::new(),
    })
}

impl AnnihilatorOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Rank of the retained control block.
    pub fn k_eff(&self) -> usize {
        self.q.ncols()
    }

    /// Number of control columns supplied, including dropped ones.
    pub fn k_total(&self) -> usize {
        self.k_total
    }

    pub fn trace(&self) -> f64 {
        (self.n - self.k_eff()) as f64
    }

    pub fn basis(&self) -> MatRef<'_, f64> {
        self.q.as_ref()
    }

    pub fn r_factor(&self) -> MatRef<'_, f64> {
        self.r.as_ref()
    }

    /// Retained original column indices, in pivot order.
    pub fn retained_columns(&self) -> &[usize] {
        &self.retained
    }

    pub fn dropped_columns(&self) -> &[usize] {
        &self.dropped
    }

    /// `M v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let k = self.k_eff();
        let mut coef = vec![0.0; k];
        for (c, kk) in coef.iter_mut().zip(0..k) {
            let col = self.q.col(kk);
            *c = (0..self.n).map(|i| col[i] * v[i]).sum();
        }
        (0..self.n)
            .map(|i| v[i] - (0..k).map(|kk| self.q[(i, kk)] * coef[kk]).sum::<f64>())
            .collect()
    }

    /// `M X` for an n × d block.
    pub fn apply_mat(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(x.nrows(), self.n);
        if self.k_eff() == 0 {
            return x.to_owned();
        }
        let proj = self.q.transpose() * x;
        x - &self.q * &proj
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if let Some(Some(m)) = self.dense.get() {
            return m[(i, j)];
        }
        let delta = if i == j { 1.0 } else { 0.0 };
        delta
            - (0..self.k_eff())
                .map(|k| self.q[(i, k)] * self.q[(j, k)])
                .sum::<f64>()
    }

    /// Row `i` of M, `e_i - Q Q' e_i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        if let Some(m) = self.dense() {
            return (0..self.n).map(|j| m[(j, i)]).collect();
        }
        (0..self.n).map(|j| self.entry(i, j)).collect()
    }

    /// Diagonal of M (one minus the leverages).
    pub fn diag(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                1.0 - (0..self.k_eff())
                    .map(|k| self.q[(i, k)].powi(2))
                    .sum::<f64>()
            })
            .collect()
    }

    /// Dense M, materialized on first use when `n` does not exceed the cap.
    pub fn dense(&self) -> Option<&Mat<f64>> {
        self.dense
            .get_or_init(|| (self.n <= self.dense_cap).then(|| self.materialize()))
            .as_ref()
    }

    /// Dense M regardless of the cap.
    pub fn materialize(&self) -> Mat<f64> {
        let mut m = if self.k_eff() == 0 {
            Mat::zeros(self.n, self.n)
        } else {
            -(&self.q * self.q.transpose())
        };
        for i in 0..self.n {
            m[(i, i)] += 1.0;
        }
        symmetrize(m.as_ref())
    }
}
