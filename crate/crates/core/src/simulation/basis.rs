use crate::error::{Error, Result};

/// Sizes of the nested polynomial expansions of a 6-vector.
pub const BASIS_SIZES: [usize; 9] = [1, 7, 13, 28, 34, 84, 90, 210, 216];

/// Largest supported expansion.
pub const MAX_BASIS: usize = 216;

/// Exponent multisets of the full degree-5 expansion in order: intercept,
/// linears, squares, pairwise products, cubes, remaining degree-3 products,
/// fourth powers, remaining degree-4 products, fifth powers. Mixed products
/// are index multisets in lexicographic order.
fn monomials() -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    out.extend((0..6).map(|a| vec![a]));
    out.extend((0..6).map(|a| vec![a, a]));
    for a in 0..6 {
        for b in a + 1..6 {
            out.push(vec![a, b]);
        }
    }
    for degree in 3..=5 {
        out.extend((0..6).map(|a| vec![a; degree]));
        if degree < 5 {
            out.extend(
                multisets(degree)
                    .into_iter()
                    .filter(|m| m.iter().any(|&v| v != m[0])),
            );
        }
    }
    out
}

fn multisets(degree: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for a in start..6 {
            cur.push(a);
            rec(a, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, degree, &mut Vec::new(), &mut out);
    out
}

/// The first `k` terms of the ordered expansion, for any `k ≤ 216`.
pub fn power_basis_prefix(z: &[f64], k: usize) -> Result<Vec<f64>> {
    if z.len() != 6 {
        return Err(Error::InvalidInput(format!(
            "basis needs a 6-vector, got length {}",
            z.len()
        )));
    }
    if k == 0 || k > MAX_BASIS {
        return Err(Error::UnsupportedBasis(k));
    }
    Ok(monomials()
        .iter()
        .take(k)
        .map(|m| m.iter().map(|&a| z[a]).product())
        .collect())
}

/// One of the nine nested expansions listed in [`BASIS_SIZES`].
pub fn build_power_basis(z: &[f64], k: usize) -> Result<Vec<f64>> {
    if !BASIS_SIZES.contains(&k) {
        return Err(Error::UnsupportedBasis(k));
    }
    power_basis_prefix(z, k)
}
