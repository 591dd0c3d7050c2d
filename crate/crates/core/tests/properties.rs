use crve_core::linalg::{max_abs, max_abs_diff};
use crve_core::oracle;
use crve_core::simulation::stream_rng;
use crve_core::*;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

/// Dataset with `d = 2`, `k` controls (the first an intercept when `k > 0`)
/// and the given cluster sizes, filled with Gaussian draws from `seed`.
fn dataset(sizes: &[usize], k: usize, seed: u64) -> Dataset {
    let n: usize = sizes.iter().sum();
    let mut rng = stream_rng(seed, 0);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let w = Mat::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { draw() });
    let x = Mat::from_fn(n, 2, |_, _| draw());
    let y = (0..n).map(|_| draw()).collect();
    let ids = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g as i64, s))
        .collect();
    Dataset::new(y, x, w, ids).unwrap()
}

fn design() -> impl Strategy<Value = (Vec<usize>, usize, u64)> {
    (
        prop::collection::vec(1usize..=4, 4..9),
        0usize..4,
        any::<u64>(),
    )
        .prop_filter("controls leave room for the regressors", |(s, k, _)| {
            s.iter().sum::<usize>() >= k + 5
        })
}

fn close(a: MatRef<'_, f64>, b: MatRef<'_, f64>, tol: f64) -> bool {
    max_abs_diff(a, b) <= tol * (1.0 + max_abs(a))
}

type Fitted = (FitResult, VarianceEstimate, VarianceEstimate);

/// Fit with LZ and CR meats. Tiny designs can make the correction system
/// genuinely singular; those cases are rejected rather than counted.
fn fit_all(data: &Dataset, opts: &SolverOptions) -> std::result::Result<Fitted, TestCaseError> {
    let op = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
    let fit = fit_ols(data, &op).unwrap();
    let part = partition_clusters(&data.cluster_id);
    let idx = build_pair_index(&part, &PairRestriction::None).unwrap();
    let lz = sigma_lz(&fit, &part).unwrap();
    match sigma_cr(&fit, &op, &idx, opts) {
        Ok(cr) => Ok((fit, lz, cr)),
        Err(Error::SingularSystem { .. }) => {
            Err(TestCaseError::reject("singular correction system"))
        }
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partialling_out_matches_explicit_residual_maker((sizes, k, seed) in design()) {
        let data = dataset(&sizes, k, seed);
        let op = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
        let fit = fit_ols(&data, &op).unwrap();
        let m = oracle::explicit_annihilator(data.w.as_ref());
        let mx = &m * &data.x;
        let my = &m * Mat::from_fn(data.n(), 1, |i, _| data.y[i]);
        let lhs = mx.transpose() * &mx;
        let rhs = mx.transpose() * &my;
        let beta = oracle::explicit_inverse(lhs.as_ref()) * rhs;
        for j in 0..2 {
            prop_assert!((beta[(j, 0)] - fit.beta_hat[j]).abs() < 1e-10 * (1.0 + beta[(j, 0)].abs()));
        }
    }

    #[test]
    fn observation_order_is_irrelevant((sizes, k, seed) in design(), shift in 1usize..50) {
        let data = dataset(&sizes, k, seed);
        let n = data.n();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
        prop_assume!({
            let mut p = perm.clone();
            p.sort_unstable();
            p.dedup();
            p.len() == n
        });
        let permuted = Dataset::new(
            perm.iter().map(|&i| data.y[i]).collect(),
            Mat::from_fn(n, 2, |r, c| data.x[(perm[r], c)]),
            Mat::from_fn(n, k, |r, c| data.w[(perm[r], c)]),
            perm.iter().map(|&i| data.cluster_id[i]).collect(),
        ).unwrap();
        let opts = SolverOptions::default();
        let (a, lz_a, cr_a) = fit_all(&data, &opts)?;
        let (b, lz_b, cr_b) = fit_all(&permuted, &opts)?;
        for j in 0..2 {
            prop_assert!((a.beta_hat[j] - b.beta_hat[j]).abs() < 1e-12 * (1.0 + a.beta_hat[j].abs()));
        }
        let mut ua = a.u_hat.clone();
        let mut ub = b.u_hat.clone();
        ua.sort_by(f64::total_cmp);
        ub.sort_by(f64::total_cmp);
        for (x, y) in ua.iter().zip(&ub) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(close(lz_a.sigma.as_ref(), lz_b.sigma.as_ref(), 1e-10));
        prop_assert!(close(cr_a.sigma.as_ref(), cr_b.sigma.as_ref(), 1e-10));
    }

    #[test]
    fn duplicated_control_changes_nothing((sizes, k, seed) in design()) {
        prop_assume!(k >= 2);
        let data = dataset(&sizes, k, seed);
        let n = data.n();
        let w2 = Mat::from_fn(n, k + 1, |i, j| data.w[(i, if j == k { 1 } else { j })]);
        let dup = Dataset::new(data.y.clone(), data.x.clone(), w2, data.cluster_id.clone()).unwrap();
        let op_a = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
        let op_b = compute_annihilator(dup.w.as_ref(), Default::default()).unwrap();
        prop_assert_eq!(op_a.k_eff(), op_b.k_eff());
        let a = fit_ols(&data, &op_a).unwrap();
        let b = fit_ols(&dup, &op_b).unwrap();
        for j in 0..2 {
            prop_assert!((a.beta_hat[j] - b.beta_hat[j]).abs() < 1e-10 * (1.0 + a.beta_hat[j].abs()));
        }
        for i in 0..n {
            prop_assert!((a.u_hat[i] - b.u_hat[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn system_matches_kronecker_oracle((sizes, k, seed) in design()) {
        let data = dataset(&sizes, k, seed);
        let op = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
        let idx = build_pair_index(&partition_clusters(&data.cluster_id), &PairRestriction::None).unwrap();
        let sys = build_kappa_system(&op, &idx, &Default::default()).unwrap();
        let m = oracle::explicit_annihilator(data.w.as_ref());
        let brute = oracle::kronecker_system(m.as_ref(), &oracle::enumerate_pairs(&data.cluster_id));
        prop_assert!(max_abs_diff(sys.materialize().as_ref(), brute.as_ref()) <= 1e-12);
    }

    #[test]
    fn solution_is_swap_symmetric((sizes, k, seed) in design()) {
        let data = dataset(&sizes, k, seed);
        let op = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
        let fit = fit_ols(&data, &op).unwrap();
        let idx = build_pair_index(&partition_clusters(&data.cluster_id), &PairRestriction::None).unwrap();
        for mode in [SolverMode::Dense, SolverMode::MatrixFree] {
            let opts = SolverOptions { mode, ..Default::default() };
            let sys = build_kappa_system(&op, &idx, &opts).unwrap();
            let s = variance::residual_products(&fit.u_hat, &idx);
            let Ok((c, _)) = solve_kappa_system(&sys, &s, &opts) else {
                return Err(TestCaseError::reject("singular correction system"));
            };
            let scale = c.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for a in 0..idx.len() {
                prop_assert!((c[a] - c[idx.swap(a)]).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn cluster_labels_and_order_are_irrelevant((sizes, k, seed) in design()) {
        let data = dataset(&sizes, k, seed);
        let n = data.n();
        // Reverse the order of whole clusters and relabel them.
        let g = sizes.len();
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for c in (0..g).rev() {
            order.extend((0..n).filter(|&i| data.cluster_id[i] == c as i64));
        }
        let moved = Dataset::new(
            order.iter().map(|&i| data.y[i]).collect(),
            Mat::from_fn(n, 2, |r, c| data.x[(order[r], c)]),
            Mat::from_fn(n, k, |r, c| data.w[(order[r], c)]),
            order.iter().map(|&i| 1000 - 3 * data.cluster_id[i]).collect(),
        ).unwrap();
        let opts = SolverOptions::default();
        let (_, lz_a, cr_a) = fit_all(&data, &opts)?;
        let (_, lz_b, cr_b) = fit_all(&moved, &opts)?;
        prop_assert!(close(lz_a.sigma.as_ref(), lz_b.sigma.as_ref(), 1e-10));
        prop_assert!(close(cr_a.sigma.as_ref(), cr_b.sigma.as_ref(), 1e-10));
    }

    #[test]
    fn identity_weights_give_liang_zeger((sizes, k, seed) in design()) {
        let data = dataset(&sizes, k, seed);
        let op = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
        let fit = fit_ols(&data, &op).unwrap();
        let part = partition_clusters(&data.cluster_id);
        let idx = build_pair_index(&part, &PairRestriction::None).unwrap();
        let general = sigma_general(&fit, &idx, Mat::<f64>::identity(idx.len(), idx.len()).as_ref()).unwrap();
        let lz = sigma_lz(&fit, &part).unwrap();
        prop_assert!(max_abs_diff(general.sigma.as_ref(), lz.sigma.as_ref()) <= 1e-12 * (1.0 + max_abs(lz.sigma.as_ref())));
    }

    #[test]
    fn singletons_reduce_to_leverage_corrected_hc((n, k, seed) in (6usize..14, 0usize..4, any::<u64>())) {
        let data = dataset(&vec![1; n], k, seed);
        let op = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
        let fit = fit_ols(&data, &op).unwrap();
        let idx = build_pair_index(&partition_clusters(&data.cluster_id), &PairRestriction::None).unwrap();
        let Ok(cr) = sigma_cr(&fit, &op, &idx, &Default::default()) else {
            return Err(TestCaseError::reject("singular correction system"));
        };
        let m = oracle::explicit_annihilator(data.w.as_ref());
        let hc = oracle::hadamard_meat(m.as_ref(), fit.v_hat.as_ref(), &fit.u_hat);
        prop_assert!(max_abs_diff(cr.sigma.as_ref(), hc.as_ref()) <= 1e-12 * (1.0 + max_abs(hc.as_ref())));
    }

    #[test]
    fn solver_paths_agree((sizes, k, seed) in design()) {
        let data = dataset(&sizes, k, seed);
        let reference = fit_all(&data, &SolverOptions { mode: SolverMode::Dense, ..Default::default() })?.2;
        for mode in [SolverMode::Dense, SolverMode::MatrixFree] {
            for form in [SystemForm::Ordered, SystemForm::Collapsed] {
                let cr = fit_all(&data, &SolverOptions { mode, form, ..Default::default() })?.2;
                prop_assert!(close(reference.sigma.as_ref(), cr.sigma.as_ref(), 1e-8));
            }
        }
    }

    #[test]
    fn factored_and_dense_residual_makers_agree((sizes, k, seed) in design()) {
        let data = dataset(&sizes, k, seed);
        let idx = build_pair_index(&partition_clusters(&data.cluster_id), &PairRestriction::None).unwrap();
        let cached = compute_annihilator(data.w.as_ref(), Default::default()).unwrap();
        let factored = compute_annihilator(data.w.as_ref(), AnnihilatorOptions { dense_cap: 0, ..Default::default() }).unwrap();
        let opts = SolverOptions { mode: SolverMode::MatrixFree, ..Default::default() };
        let a = build_kappa_system(&cached, &idx, &opts).unwrap();
        let b = build_kappa_system(&factored, &idx, &opts).unwrap();
        let probe: Vec<f64> = (0..idx.len()).map(|t| ((t * 37 + 11) % 17) as f64 - 8.0).collect();
        let (ya, yb) = (a.apply(&probe), b.apply(&probe));
        for (p, q) in ya.iter().zip(&yb) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_the_outcome_rescales_inference((sizes, k, seed) in design(), scale in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0]) {
        let data = dataset(&sizes, k, seed);
        let scaled = Dataset::new(
            data.y.iter().map(|y| scale * y).collect(),
            data.x.clone(),
            data.w.clone(),
            data.cluster_id.clone(),
        ).unwrap();
        let opts = SolverOptions::default();
        let (fa, _, ca) = fit_all(&data, &opts)?;
        let (fb, _, cb) = fit_all(&scaled, &opts)?;
        let (Ok(ra), Ok(rb)) = (infer(&fa, &ca, 0.05), infer(&fb, &cb, 0.05)) else {
            return Ok(());
        };
        for j in 0..2 {
            prop_assert!((rb.std_errors[j] - scale.abs() * ra.std_errors[j]).abs() < 1e-9 * (1.0 + rb.std_errors[j]));
            for truth in [-1.0, 0.0, 0.3] {
                let covered_a = ra.ci_lower[j] <= truth && truth <= ra.ci_upper[j];
                let (lo, hi) = (rb.ci_lower[j], rb.ci_upper[j]);
                let covered_b = lo <= scale * truth && scale * truth <= hi;
                let margin = (truth - ra.ci_lower[j]).abs().min((truth - ra.ci_upper[j]).abs());
                prop_assume!(margin > 1e-9);
                prop_assert_eq!(covered_a, covered_b);
            }
        }
    }
}

/// With homoskedastic independent errors and few controls, the gap between
/// the Liang–Zeger and corrected estimators shrinks as the sample grows.
#[test]
fn fixed_controls_gap_shrinks_with_n() {
    let opts = SolverOptions {
        mode: SolverMode::MatrixFree,
        form: SystemForm::Collapsed,
        ..Default::default()
    };
    let medians: Vec<f64> = [100usize, 400, 1600]
        .iter()
        .map(|&n| {
            let mut gaps: Vec<f64> = (0..50u64)
                .map(|rep| {
                    let mut rng = stream_rng(n as u64, rep);
                    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
                    let w = Mat::from_fn(n, 5, |_, j| if j == 0 { 1.0 } else { draw() });
                    let x = Mat::from_fn(n, 1, |_, _| draw());
                    let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + draw()).collect();
                    let ids = (0..n).map(|i| (i / 4) as i64).collect();
                    let data = Dataset::new(y, x, w, ids).unwrap();
                    let (_, lz, cr) = fit_all(&data, &opts).unwrap();
                    ((lz.sigma[(0, 0)] - cr.sigma[(0, 0)]) / cr.sigma[(0, 0)]).abs()
                })
                .collect();
            gaps.sort_by(f64::total_cmp);
            0.5 * (gaps[24] + gaps[25])
        })
        .collect();
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "{medians:?}"
    );
}
