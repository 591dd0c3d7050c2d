use serde::{Deserialize, Serialize};

use super::system::{KappaSystem, SolverOptions};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Exact,
    /// Hager–Higham 1-norm estimator on `A⁻¹`; a lower bound on the exact value.
    Estimate,
    /// Estimate when `L > 2000`, exact otherwise.
    #[default]
    Auto,
}

/// `‖κ_CR‖∞ = ‖A⁻¹‖∞`, the largest absolute row sum of the inverse
/// correction system.
pub fn kappa_inf_norm(sys: &KappaSystem<'_>, mode: NormMode, opts: &SolverOptions) -> Result<f64> {
    let exact = match mode {
        NormMode::Exact => true,
        NormMode::Estimate => false,
        NormMode::Auto => sys.dimension() <= 2000,
    };
    if exact {
        exact_norm(sys, opts)
    } else {
        estimate_norm(sys, opts)
    }
}

fn exact_norm(sys: &KappaSystem<'_>, opts: &SolverOptions) -> Result<f64> {
    if let Some(inv) = sys.ordered_inverse() {
        let inv = inv?;
        let best = (0..inv.nrows())
            .map(|r| (0..inv.ncols()).map(|c| inv[(r, c)].abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        return Ok(best);
    }
    if let Some(halves) = sys.half_inverses() {
        let (b_inv, a_inv) = halves?;
        let (collapsed, anti_of_rep) = sys.collapsed_maps().expect("collapsed system");
        // A⁻¹[a, b] splits into a swap-symmetric part w_p B⁻¹[p, q] / 2 and an
        // antisymmetric part ±(B₋)⁻¹[p, q] / 2; the pair of columns b, swap(b)
        // contributes |h + t| + |h − t| = 2 max(|h|, |t|).
        let mut best = 0.0f64;
        for p in 0..collapsed.len() {
            let wp = if anti_of_rep[p].is_none() { 2.0 } else { 1.0 };
            let mut row = 0.0;
            for q in 0..collapsed.len() {
                match anti_of_rep[q] {
                    None => row += (wp * b_inv[(p, q)]).abs(),
                    Some(rq) => {
                        let h = 0.5 * wp * b_inv[(p, q)];
                        let t = anti_of_rep[p].map_or(0.0, |rp| 0.5 * a_inv[(rp, rq)]);
                        row += 2.0 * h.abs().max(t.abs());
                    }
                }
            }
            best = best.max(row);
        }
        return Ok(best);
    }
    // Matrix-free: one solve per unit vector. Rows a and swap(a) share their
    // absolute sum, so only representatives are solved.
    let l = sys.dimension();
    let idx = sys.pair_index();
    let pos = idx.positions();
    let mut best = 0.0f64;
    let mut e = vec![0.0; l];
    for (a, p) in idx.pairs().iter().enumerate() {
        if pos[p.i] > pos[p.j] {
            continue;
        }
        e[a] = 1.0;
        let (x, _) = sys.solve_raw(&e, opts)?;
        e[a] = 0.0;
        best = best.max(x.iter().map(|v| v.abs()).sum());
    }
    Ok(best)
}

/// Hager's method with Higham's refinements, applied to the symmetric `A⁻¹`.
fn estimate_norm(sys: &KappaSystem<'_>, opts: &SolverOptions) -> Result<f64> {
    let l = sys.dimension();
    if l == 0 {
        return Ok(0.0);
    }
    let solve = |v: &[f64]| sys.solve_raw(v, opts).map(|r| r.0);
    let norm1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let sign = |v: &[f64]| {
        v.iter()
            .map(|&x| if x >= 0.0 { 1.0 } else { -1.0 })
            .collect::<Vec<f64>>()
    };

    let mut x = vec![1.0 / l as f64; l];
    let mut y = solve(&x)?;
    let mut est = norm1(&y);
    if l > 1 {
        let mut xi = sign(&y);
        let mut z = solve(&xi)?;
        for _ in 0..5 {
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (t, &v)| {
                    if v.abs() > acc.1 {
                        (t, v.abs())
                    } else {
                        acc
                    }
                });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[jmax] = 1.0;
            y = solve(&x)?;
            let new_est = norm1(&y);
            let new_xi = sign(&y);
            if new_xi == xi || new_est <= est {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            xi = new_xi;
            z = solve(&xi)?;
        }
        let alt: Vec<f64> = (0..l)
            .map(|t| {
                let s = if t % 2 == 0 { 1.0 } else { -1.0 };
                s * (1.0 + t as f64 / (l - 1) as f64)
            })
            .collect();
        let extra = 2.0 * norm1(&solve(&alt)?) / (3.0 * l as f64);
        est = est.max(extra);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use faer::Mat;

    use super::*;
    use crate::model::{compute_annihilator, partition_clusters};
    use crate::oracle::explicit_inverse;
    use crate::variance::pairs::{build_pair_index, PairRestriction};
    use crate::variance::system::{build_kappa_system, SolverMode, SystemForm};

    fn uniform(seed: u64, n: usize, k: usize) -> Mat<f64> {
        let mut s = seed;
        Mat::from_fn(n, k, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_norm_is_one() {
        let op = compute_annihilator(Mat::<f64>::zeros(6, 0).as_ref(), Default::default()).unwrap();
        let idx = build_pair_index(
            &partition_clusters(&[0, 1, 2, 3, 4, 5]),
            &PairRestriction::None,
        )
        .unwrap();
        let sys = build_kappa_system(&op, &idx, &Default::default()).unwrap();
        for mode in [NormMode::Exact, NormMode::Estimate] {
            let v = kappa_inf_norm(&sys, mode, &Default::default()).unwrap();
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_paths_agree_with_explicit_inverse() {
        let ids: Vec<i64> = (0..30).map(|i| i / 3).collect();
        let w = uniform(17, 30, 8);
        let op = compute_annihilator(w.as_ref(), Default::default()).unwrap();
        let idx = build_pair_index(&partition_clusters(&ids), &PairRestriction::None).unwrap();
        let base = build_kappa_system(&op, &idx, &Default::default()).unwrap();
        let inv = explicit_inverse(base.materialize().as_ref());
        let oracle = (0..inv.nrows())
            .map(|r| (0..inv.ncols()).map(|c| inv[(r, c)].abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        for mode in [SolverMode::Dense, SolverMode::MatrixFree] {
            for form in [SystemForm::Ordered, SystemForm::Collapsed] {
                let o = SolverOptions {
                    mode,
                    form,
                    ..Default::default()
                };
                let sys = build_kappa_system(&op, &idx, &o).unwrap();
                let v = kappa_inf_norm(&sys, NormMode::Exact, &o).unwrap();
                assert!(
                    (v - oracle).abs() < 1e-8 * oracle,
                    "{mode:?} {form:?}: {v} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn estimate_is_a_tight_lower_bound() {
        let ids: Vec<i64> = (0..60).map(|i| i / 4).collect();
        let w = uniform(5, 60, 15);
        let op = compute_annihilator(w.as_ref(), Default::default()).unwrap();
        let idx = build_pair_index(&partition_clusters(&ids), &PairRestriction::None).unwrap();
        let sys = build_kappa_system(&op, &idx, &Default::default()).unwrap();
        let exact = kappa_inf_norm(&sys, NormMode::Exact, &Default::default()).unwrap();
        let est = kappa_inf_norm(&sys, NormMode::Estimate, &Default::default()).unwrap();
        assert!(est <= exact * (1.0 + 1e-10));
        assert!(est >= 0.5 * exact);
    }
}
