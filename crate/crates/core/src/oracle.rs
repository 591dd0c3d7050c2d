//! Brute-force reference computations.
//!
//! Everything here is written directly from the defining formulas with
//! explicit Kronecker products and dense inverses, and shares no code with
//! the production paths in [`crate::model`] and [`crate::variance`]. Costs
//! are quartic in `n`, so these are for small validation instances only.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef};

/// `I − W (W'W)⁻¹ W'` by explicit inversion of the Gram matrix.
/// `W` must have full column rank.
pub fn explicit_annihilator(w: MatRef<'_, f64>) -> Mat<f64> {
    let n = w.nrows();
    let mut m = Mat::<f64>::identity(n, n);
    if w.ncols() == 0 {
        return m;
    }
    let gram = w.transpose() * w;
    let inv = gram.partial_piv_lu().inverse();
    let hat = w * &inv * w.transpose();
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] -= hat[(i, j)];
        }
    }
    m
}

pub fn kronecker(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |r, c| {
        a[(r / br, c / bc)] * b[(r % br, c % bc)]
    })
}

/// Ordered within-cluster pairs `(i, j)`, cluster by cluster in order of
/// first appearance, `i` outer and `j` inner.
pub fn enumerate_pairs(cluster_id: &[i64]) -> Vec<(usize, usize)> {
    let mut seen: Vec<i64> = Vec::new();
    for &c in cluster_id {
        if !seen.contains(&c) {
            seen.push(c);
        }
    }
    let mut pairs = Vec::new();
    for c in seen {
        let members: Vec<usize> = (0..cluster_id.len())
            .filter(|&i| cluster_id[i] == c)
            .collect();
        for &i in &members {
            for &j in &members {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// n² × L selection matrix picking `vec(Ω)` at the column-major position of
/// each pair `(i, j)`.
pub fn selection_matrix(n: usize, pairs: &[(usize, usize)]) -> Mat<f64> {
    let mut s = Mat::<f64>::zeros(n * n, pairs.len());
    for (col, &(i, j)) in pairs.iter().enumerate() {
        s[(j * n + i, col)] = 1.0;
    }
    s
}

/// `S'(M ⊗ M)S` formed from the explicit n² × n² Kronecker product.
pub fn kronecker_system(m: MatRef<'_, f64>, pairs: &[(usize, usize)]) -> Mat<f64> {
    let n = m.nrows();
    let kron = kronecker(m, m);
    let s = selection_matrix(n, pairs);
    s.transpose() * &kron * &s
}

/// Entrywise square `M ⊙ M`.
pub fn hadamard_square(m: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * m[(i, j)])
}

pub fn explicit_inverse(a: MatRef<'_, f64>) -> Mat<f64> {
    a.partial_piv_lu().inverse()
}

/// Heteroskedasticity-robust meat with the leverage correction
/// `(M ⊙ M)⁻¹`: `(1/n) Σᵢ cᵢ v̂ᵢv̂ᵢ'` where `c` solves `(M ⊙ M) c = û²`.
pub fn hadamard_meat(m: MatRef<'_, f64>, v_hat: MatRef<'_, f64>, u_hat: &[f64]) -> Mat<f64> {
    let n = m.nrows();
    let d = v_hat.ncols();
    let h = hadamard_square(m);
    let rhs = Mat::from_fn(n, 1, |i, _| u_hat[i] * u_hat[i]);
    let c = h.partial_piv_lu().solve(&rhs);
    Mat::from_fn(d, d, |a, b| {
        (0..n)
            .map(|i| c[(i, 0)] * v_hat[(i, a)] * v_hat[(i, b)])
            .sum::<f64>()
            / n as f64
    })
}

/// `(1/n) Σ_a Σ_b κ[a,b] v̂_{i_a} v̂_{j_a}' û_{i_b} û_{j_b}` by direct double sum.
pub fn general_meat(
    kappa: MatRef<'_, f64>,
    pairs: &[(usize, usize)],
    v_hat: MatRef<'_, f64>,
    u_hat: &[f64],
) -> Mat<f64> {
    let n = u_hat.len();
    let d = v_hat.ncols();
    let mut out = Mat::<f64>::zeros(d, d);
    for (a, &(ia, ja)) in pairs.iter().enumerate() {
        for (b, &(ib, jb)) in pairs.iter().enumerate() {
            let w = kappa[(a, b)] * u_hat[ib] * u_hat[jb];
            for r in 0..d {
                for c in 0..d {
                    out[(r, c)] += w * v_hat[(ia, r)] * v_hat[(ja, c)];
                }
            }
        }
    }
    Mat::from_fn(d, d, |r, c| 0.5 * (out[(r, c)] + out[(c, r)]) / n as f64)
}
