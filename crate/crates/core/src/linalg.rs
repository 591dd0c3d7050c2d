//! Small dense helpers shared across modules.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef, Side};

/// `(a + a') / 2`, exactly symmetric.
pub fn symmetrize(a: MatRef<'_, f64>) -> Mat<f64> {
    assert_eq!(a.nrows(), a.ncols(), "symmetrize needs a square matrix");
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            a[(i, i)]
        } else {
            0.5 * (a[(i, j)] + a[(j, i)])
        }
    })
}

/// Smallest eigenvalue of a symmetric matrix. Returns `NaN` when the
/// eigensolver fails to converge.
pub fn min_eigenvalue(a: MatRef<'_, f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NAN;
    }
    match a.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => ev.first().copied().unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    }
}

/// Inverse of a symmetric positive definite matrix, `None` if the Cholesky
/// factorization breaks down.
pub fn spd_inverse(a: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let llt = a.llt(Side::Lower).ok()?;
    Some(symmetrize(llt.inverse().as_ref()))
}

pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// Column vector as an owned `Vec`.
pub fn col_to_vec(a: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..a.nrows()).map(|i| a[(i, j)]).collect()
}

pub fn vec_to_col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Row-major nested vectors to a matrix. All rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    Mat::from_fn(nrows, ncols, |i, j| rows[i][j])
}

pub fn to_rows(a: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_is_exact() {
        let a = Mat::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let s = symmetrize(a.as_ref());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s[(i, j)], s[(j, i)]);
            }
        }
    }

    #[test]
    fn spd_inverse_of_diagonal() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        let inv = spd_inverse(a.as_ref()).unwrap();
        assert!((inv[(2, 2)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(spd_inverse(Mat::<f64>::zeros(2, 2).as_ref()).is_none());
    }

    #[test]
    fn min_eigenvalue_known() {
        let a = from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!((min_eigenvalue(a.as_ref()) - 1.0).abs() < 1e-12);
    }
}
