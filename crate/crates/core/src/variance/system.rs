use std::sync::OnceLock;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use super::pairs::{CollapsedPairs, PairIndex};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::model::AnnihilatorOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    Dense,
    MatrixFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Dense,
    MatrixFree,
    /// Dense when the largest system has at most `dense_threshold` unknowns.
    #[default]
    Auto,
}

/// How the correction system is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemForm {
    /// One unknown per ordered pair, `L = Σ s_g²`.
    #[default]
    Ordered,
    /// Swap-symmetric and swap-antisymmetric halves solved separately over
    /// unordered pairs. Same solution, systems of half the size.
    Collapsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub mode: SolverMode,
    pub form: SystemForm,
    /// Relative residual target for conjugate gradient.
    pub tol: f64,
    /// Conjugate-gradient iteration cap; `10 · dimension` when unset.
    pub max_iter: Option<usize>,
    pub dense_threshold: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mode: SolverMode::Auto,
            form: SystemForm::Ordered,
            tol: 1e-10,
            max_iter: None,
            dense_threshold: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub storage: StorageMode,
    pub form: SystemForm,
    /// Number of ordered pairs `L`.
    pub dimension: usize,
    /// Conjugate-gradient iterations, or refinement steps for dense solves.
    pub iterations: usize,
    /// `‖A c − s‖ / ‖s‖` for the ordered system.
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ordered,
    Symmetric,
    Antisymmetric,
}

/// One symmetric positive semidefinite system over a list of unknowns, each
/// tied to an observation pair `(i, j)`.
#[derive(Debug)]
struct Block {
    kind: Kind,
    i: Vec<usize>,
    j: Vec<usize>,
    /// Unknowns grouped by their first observation.
    by_row: Vec<Vec<usize>>,
    diag: Vec<f64>,
    dense: Option<Mat<f64>>,
    factor: OnceLock<Result<Llt<f64>>>,
}

impl Block {
    fn len(&self) -> usize {
        self.i.len()
    }
}

/// The correction system `A = S'(M ⊗ M)S`, with
/// `A[a,b] = M_{i_a i_b} M_{j_a j_b}` over the ordered pairs of a
/// [`PairIndex`].
#[derive(Debug)]
pub struct KappaSystem<'a> {
    op: &'a AnnihilatorOperator,
    idx: &'a PairIndex,
    form: SystemForm,
    storage: StorageMode,
    ordered: Block,
    /// Collapsed form only: symmetric then antisymmetric halves.
    halves: Option<(Block, Block, CollapsedPairs, Vec<Option<usize>>)>,
    /// Row-major copy of the orthonormal control basis.
    q_rows: Vec<f64>,
    structure: OnceLock<Result<()>>,
}

pub fn build_kappa_system<'a>(
    op: &'a AnnihilatorOperator,
    idx: &'a PairIndex,
    opts: &SolverOptions,
) -> Result<KappaSystem<'a>> {
    if op.n() != idx.n_obs() {
        return Err(Error::DimensionMismatch(format!(
            "annihilator has n = {}, pair index has n = {}",
            op.n(),
            idx.n_obs()
        )));
    }
    let k = op.k_eff();
    let q = op.basis();
    let mut q_rows = vec![0.0; op.n() * k];
    for c in 0..k {
        for r in 0..op.n() {
            q_rows[r * k + c] = q[(r, c)];
        }
    }
    let tuples = idx.as_tuples();
    let ordered_units = (
        Kind::Ordered,
        tuples.iter().map(|t| t.0).collect::<Vec<_>>(),
        tuples.iter().map(|t| t.1).collect::<Vec<_>>(),
    );
    let (halves_units, collapsed) = match opts.form {
        SystemForm::Ordered => (None, None),
        SystemForm::Collapsed => {
            let c = idx.collapsed();
            let mut si = Vec::with_capacity(c.len());
            let mut sj = Vec::with_capacity(c.len());
            let mut ai = Vec::new();
            let mut aj = Vec::new();
            let mut anti_of_rep = Vec::with_capacity(c.len());
            for &a in &c.reps {
                let (i, j) = tuples[a];
                si.push(i);
                sj.push(j);
                if i == j {
                    anti_of_rep.push(None);
                } else {
                    anti_of_rep.push(Some(ai.len()));
                    ai.push(i);
                    aj.push(j);
                }
            }
            (
                Some((
                    (Kind::Symmetric, si, sj),
                    (Kind::Antisymmetric, ai, aj),
                    anti_of_rep,
                )),
                Some(c),
            )
        }
    };
    let largest = match &halves_units {
        None => idx.len(),
        Some((s, _, _)) => s.1.len(),
    };
    let storage = match opts.mode {
        SolverMode::Dense => StorageMode::Dense,
        SolverMode::MatrixFree => StorageMode::MatrixFree,
        SolverMode::Auto if largest <= opts.dense_threshold => StorageMode::Dense,
        SolverMode::Auto => StorageMode::MatrixFree,
    };

    let mut sys = KappaSystem {
        op,
        idx,
        form: opts.form,
        storage,
        ordered: empty_block(Kind::Ordered),
        halves: None,
        q_rows,
        structure: OnceLock::new(),
    };
    let dense_ordered = storage == StorageMode::Dense && opts.form == SystemForm::Ordered;
    sys.ordered = sys.make_block(ordered_units, dense_ordered);
    if let (Some((s, a, anti_of_rep)), Some(c)) = (halves_units, collapsed) {
        let dense = storage == StorageMode::Dense;
        let sym = sys.make_block(s, dense);
        let anti = sys.make_block(a, dense);
        sys.halves = Some((sym, anti, c, anti_of_rep));
    }
    Ok(sys)
}

fn empty_block(kind: Kind) -> Block {
    Block {
        kind,
        i: Vec::new(),
        j: Vec::new(),
        by_row: Vec::new(),
        diag: Vec::new(),
        dense: None,
        factor: OnceLock::new(),
    }
}

/// Scatter terms `(k, l, coef)` of one unknown: the unit vector it places in
/// the n × n matrix `C`.
fn terms(kind: Kind, i: usize, j: usize) -> ([(usize, usize, f64); 2], usize) {
    match kind {
        Kind::Ordered => ([(i, j, 1.0), (0, 0, 0.0)], 1),
        Kind::Symmetric if i == j => ([(i, i, 2.0), (0, 0, 0.0)], 1),
        Kind::Symmetric => ([(i, j, 1.0), (j, i, 1.0)], 2),
        Kind::Antisymmetric => ([(i, j, 1.0), (j, i, -1.0)], 2),
    }
}

impl<'a> KappaSystem<'a> {
    fn make_block(&self, units: (Kind, Vec<usize>, Vec<usize>), dense: bool) -> Block {
        let (kind, i, j) = units;
        let n = self.op.n();
        let mut by_row = vec![Vec::new(); n];
        for (u, &r) in i.iter().enumerate() {
            by_row[r].push(u);
        }
        let diag = (0..i.len())
            .map(|u| self.block_entry(kind, i[u], j[u], i[u], j[u], &|a, b| self.op.entry(a, b)))
            .collect();
        let dense = dense.then(|| {
            let local;
            let m = match self.op.dense() {
                Some(m) => m,
                None => {
                    local = self.op.materialize();
                    &local
                }
            };
            let get = |a: usize, b: usize| m[(a, b)];
            let mut out = Mat::<f64>::zeros(i.len(), i.len());
            for w in 0..i.len() {
                for u in w..i.len() {
                    let v = self.block_entry(kind, i[u], j[u], i[w], j[w], &get);
                    out[(u, w)] = v;
                    out[(w, u)] = v;
                }
            }
            out
        });
        Block {
            kind,
            i,
            j,
            by_row,
            diag,
            dense,
            factor: OnceLock::new(),
        }
    }

    /// Row unknown `(iu, ju)`, column unknown `(iw, jw)`.
    fn block_entry(
        &self,
        kind: Kind,
        iu: usize,
        ju: usize,
        iw: usize,
        jw: usize,
        m: &dyn Fn(usize, usize) -> f64,
    ) -> f64 {
        let (t, nt) = terms(kind, iw, jw);
        t[..nt]
            .iter()
            .map(|&(k, l, c)| c * m(iu, k) * m(l, ju))
            .sum()
    }

    pub fn dimension(&self) -> usize {
        self.idx.len()
    }

    pub fn storage(&self) -> StorageMode {
        self.storage
    }

    pub fn form(&self) -> SystemForm {
        self.form
    }

    pub fn pair_index(&self) -> &PairIndex {
        self.idx
    }

    pub fn operator(&self) -> &AnnihilatorOperator {
        self.op
    }

    /// `A[a, b]` of the ordered system.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let pa = self.idx.pairs()[a];
        let pb = self.idx.pairs()[b];
        self.op.entry(pa.i, pb.i) * self.op.entry(pa.j, pb.j)
    }

    /// Dense ordered `A`, formed entrywise.
    pub fn materialize(&self) -> Mat<f64> {
        if let Some(a) = &self.ordered.dense {
            return a.clone();
        }
        let l = self.dimension();
        let local;
        let m = match self.op.dense() {
            Some(m) => m,
            None => {
                local = self.op.materialize();
                &local
            }
        };
        let pairs = self.idx.pairs();
        Mat::from_fn(l, l, |a, b| {
            m[(pairs[a].i, pairs[b].i)] * m[(pairs[a].j, pairs[b].j)]
        })
    }

    /// `A c` for the ordered system, without forming `A`.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.dimension());
        self.apply_block(&self.ordered, c)
    }

    fn apply_block(&self, b: &Block, y: &[f64]) -> Vec<f64> {
        if b.len() == 0 {
            return Vec::new();
        }
        let scattered = self.scatter(b, y);
        match self.op.dense() {
            Some(m) => self.gather_dense(b, &scattered, m),
            None => self.gather_factored(b, &scattered),
        }
    }

    /// Per-cluster s_g × s_g row-major blocks of `C`.
    fn scatter(&self, b: &Block, y: &[f64]) -> Vec<Vec<f64>> {
        let groups = self.idx.groups();
        let pos = self.idx.positions();
        let member = self.idx.membership();
        let mut blocks: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| vec![0.0; g.len() * g.len()])
            .collect();
        for (u, &yu) in y.iter().enumerate().take(b.len()) {
            let (t, nt) = terms(b.kind, b.i[u], b.j[u]);
            for &(k, l, coef) in &t[..nt] {
                let g = member[k];
                let s = groups[g].len();
                blocks[g][pos[k] * s + pos[l]] += coef * yu;
            }
        }
        blocks
    }

    /// Gathers `(M C M)[i_u, j_u]` with dense M: for each row observation
    /// `i`, forms `h = C' M e_i` and dots it with the columns `M e_{j_u}`.
    fn gather_dense(&self, b: &Block, c: &[Vec<f64>], m: &Mat<f64>) -> Vec<f64> {
        let n = self.op.n();
        let groups = self.idx.groups();
        let mut out = vec![0.0; b.len()];
        let mut h = vec![0.0; n];
        for (i, units) in b.by_row.iter().enumerate() {
            if units.is_empty() {
                continue;
            }
            let mi = m.col_as_slice(i);
            for (g, members) in groups.iter().enumerate() {
                let s = members.len();
                let cg = &c[g];
                for (pl, &l) in members.iter().enumerate() {
                    let mut acc = 0.0;
                    for (pk, &k) in members.iter().enumerate() {
                        acc += cg[pk * s + pl] * mi[k];
                    }
                    h[l] = acc;
                }
            }
            for &u in units {
                out[u] = dot(&h, m.col_as_slice(b.j[u]));
            }
        }
        out
    }

    /// Gathers `(M C M)[i_u, j_u]` from the orthonormal basis Q using
    /// `M C M = C − Q(Q'C) − (CQ)Q' + Q(Q'CQ)Q'`.
    fn gather_factored(&self, b: &Block, c: &[Vec<f64>]) -> Vec<f64> {
        let n = self.op.n();
        let k = self.op.k_eff();
        let groups = self.idx.groups();
        let pos = self.idx.positions();
        let member = self.idx.membership();
        let q = &self.q_rows;
        let qrow = |r: usize| &q[r * k..(r + 1) * k];

        // P = C Q and R = C' Q, row-major n × k.
        let mut p = vec![0.0; n * k];
        let mut r = vec![0.0; n * k];
        for (g, members) in groups.iter().enumerate() {
            let s = members.len();
            for (pk, &obs_k) in members.iter().enumerate() {
                for (pl, &obs_l) in members.iter().enumerate() {
                    let v = c[g][pk * s + pl];
                    if v == 0.0 {
                        continue;
                    }
                    for t in 0..k {
                        p[obs_k * k + t] += v * q[obs_l * k + t];
                        r[obs_l * k + t] += v * q[obs_k * k + t];
                    }
                }
            }
        }
        // Z = Q'P (k × k, row-major), Y = Q Z.
        let mut z = vec![0.0; k * k];
        for obs in 0..n {
            let qo = qrow(obs);
            let po = &p[obs * k..(obs + 1) * k];
            for a in 0..k {
                if qo[a] == 0.0 {
                    continue;
                }
                for bcol in 0..k {
                    z[a * k + bcol] += qo[a] * po[bcol];
                }
            }
        }
        let mut y = vec![0.0; n * k];
        for obs in 0..n {
            let qo = qrow(obs);
            for a in 0..k {
                if qo[a] == 0.0 {
                    continue;
                }
                for bcol in 0..k {
                    y[obs * k + bcol] += qo[a] * z[a * k + bcol];
                }
            }
        }
        (0..b.len())
            .map(|u| {
                let (i, j) = (b.i[u], b.j[u]);
                let g = member[i];
                let s = groups[g].len();
                let cij = c[g][pos[i] * s + pos[j]];
                let qi = qrow(i);
                let qj = qrow(j);
                cij - dot(qi, &r[j * k..(j + 1) * k]) - dot(&p[i * k..(i + 1) * k], qj)
                    + dot(&y[i * k..(i + 1) * k], qj)
            })
            .collect()
    }

    /// Rejects designs where a cluster indicator lies in the span of the
    /// controls: the indicator outer product is then a null vector of A.
    fn check_structure(&self) -> Result<()> {
        self.structure
            .get_or_init(|| {
                if self.idx.is_restricted() {
                    return Ok(());
                }
                let k = self.op.k_eff();
                for (g, members) in self.idx.groups().iter().enumerate() {
                    let mut proj = vec![0.0; k];
                    for &i in members {
                        for (t, pt) in proj.iter_mut().enumerate() {
                            *pt += self.q_rows[i * k + t];
                        }
                    }
                    let s = members.len() as f64;
                    let resid = s - dot(&proj, &proj);
                    if resid <= 1e-10 * s {
                        return Err(Error::SingularSystem {
                            detail: format!(
                                "the indicator of cluster {g} is annihilated by the controls"
                            ),
                        });
                    }
                }
                Ok(())
            })
            .clone()
    }

    fn factor<'b>(&self, b: &'b Block) -> Result<&'b Llt<f64>> {
        let a = b.dense.as_ref().expect("dense block");
        b.factor
            .get_or_init(|| {
                let llt = Llt::new(a.as_ref(), Side::Lower).map_err(|_| Error::SingularSystem {
                    detail: "Cholesky factorization of the correction system failed".into(),
                })?;
                let l = llt.L();
                let max_diag = (0..a.nrows()).map(|t| a[(t, t)]).fold(0.0f64, f64::max);
                let min_pivot = (0..l.nrows()).map(|t| l[(t, t)].powi(2)).fold(f64::INFINITY, f64::min);
                if min_pivot <= 1e-10 * max_diag {
                    return Err(Error::SingularSystem {
                        detail: format!(
                            "smallest Cholesky pivot {min_pivot:.3e} relative to largest diagonal {max_diag:.3e}"
                        ),
                    });
                }
                Ok(llt)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn solve_block(
        &self,
        b: &Block,
        rhs: &[f64],
        opts: &SolverOptions,
    ) -> Result<(Vec<f64>, usize)> {
        let dim = b.len();
        if dim == 0 {
            return Ok((Vec::new(), 0));
        }
        match &b.dense {
            Some(a) => {
                let llt = self.factor(b)?;
                let rhs_col = Mat::from_fn(dim, 1, |t, _| rhs[t]);
                let mut x = llt.solve(&rhs_col);
                let bnorm = norm2(rhs);
                let mut steps = 0;
                if bnorm > 0.0 {
                    let resid = &rhs_col - a * &x;
                    let rnorm = (0..dim).map(|t| resid[(t, 0)].powi(2)).sum::<f64>().sqrt();
                    if rnorm > opts.tol * bnorm {
                        x += llt.solve(&resid);
                        steps = 1;
                    }
                }
                Ok(((0..dim).map(|t| x[(t, 0)]).collect(), steps))
            }
            None => {
                let max_iter = opts.max_iter.unwrap_or(10 * dim);
                pcg(|v| self.apply_block(b, v), &b.diag, rhs, opts.tol, max_iter)
            }
        }
    }

    /// Solution of `A c = rhs` and the total iteration count.
    pub(crate) fn solve_raw(&self, rhs: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, usize)> {
        assert_eq!(rhs.len(), self.dimension());
        if let Some(bad) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "right-hand side entry {bad} is not finite"
            )));
        }
        self.check_structure()?;
        let Some((sym, anti, collapsed, anti_of_rep)) = &self.halves else {
            return self.solve_block(&self.ordered, rhs, opts);
        };
        let mut s_sym = Vec::with_capacity(sym.len());
        let mut s_anti = vec![0.0; anti.len()];
        for (q, &a) in collapsed.reps.iter().enumerate() {
            let b = self.idx.swap(a);
            s_sym.push(0.5 * (rhs[a] + rhs[b]));
            if let Some(r) = anti_of_rep[q] {
                s_anti[r] = 0.5 * (rhs[a] - rhs[b]);
            }
        }
        let (y, it_s) = self.solve_block(sym, &s_sym, opts)?;
        let (z, it_a) = self.solve_block(anti, &s_anti, opts)?;
        let pairs = self.idx.pairs();
        let pos = self.idx.positions();
        let c = (0..self.dimension())
            .map(|a| {
                let q = collapsed.of_ordered[a];
                let p = pairs[a];
                match anti_of_rep[q] {
                    None => 2.0 * y[q],
                    Some(r) if pos[p.i] < pos[p.j] => y[q] + z[r],
                    Some(r) => y[q] - z[r],
                }
            })
            .collect();
        Ok((c, it_s + it_a))
    }

    /// Dense inverses of the symmetric and antisymmetric halves.
    pub(crate) fn half_inverses(&self) -> Option<Result<(Mat<f64>, Mat<f64>)>> {
        let (sym, anti, _, _) = self.halves.as_ref()?;
        sym.dense.as_ref()?;
        Some((|| {
            self.check_structure()?;
            Ok((self.block_inverse(sym)?, self.block_inverse(anti)?))
        })())
    }

    pub(crate) fn ordered_inverse(&self) -> Option<Result<Mat<f64>>> {
        self.ordered.dense.as_ref()?;
        Some(
            self.check_structure()
                .and_then(|_| self.block_inverse(&self.ordered)),
        )
    }

    fn block_inverse(&self, b: &Block) -> Result<Mat<f64>> {
        if b.len() == 0 {
            return Ok(Mat::zeros(0, 0));
        }
        let llt = self.factor(b)?;
        Ok(llt.solve(Mat::<f64>::identity(b.len(), b.len())))
    }

    /// Collapsed-form bookkeeping for exact norms: representative index of
    /// each ordered pair and antisymmetric index of each representative.
    pub(crate) fn collapsed_maps(&self) -> Option<(&CollapsedPairs, &[Option<usize>])> {
        self.halves.as_ref().map(|(_, _, c, m)| (c, m.as_slice()))
    }
}

/// Solves `A c = rhs` and reports solver diagnostics.
pub fn solve_kappa_system(
    sys: &KappaSystem<'_>,
    rhs: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolverInfo)> {
    if rhs.len() != sys.dimension() {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side has length {}, system has {} pairs",
            rhs.len(),
            sys.dimension()
        )));
    }
    let (c, iterations) = sys.solve_raw(rhs, opts)?;
    let bnorm = norm2(rhs);
    let residual_norm = if bnorm == 0.0 {
        0.0
    } else {
        let ac = sys.apply(&c);
        let r: Vec<f64> = ac.iter().zip(rhs).map(|(x, y)| x - y).collect();
        norm2(&r) / bnorm
    };
    Ok((
        c,
        SolverInfo {
            storage: sys.storage(),
            form: sys.form(),
            dimension: sys.dimension(),
            iterations,
            residual_norm,
        },
    ))
}

/// Jacobi-preconditioned conjugate gradient from a zero start.
fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let inv: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 1e-300 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SingularSystem {
                detail: format!("conjugate gradient met non-positive curvature at iteration {it}"),
            });
        }
        let alpha = rz / pap;
        for t in 0..n {
            x[t] += alpha * p[t];
            r[t] -= alpha * ap[t];
        }
        let rnorm = norm2(&r);
        if rnorm <= tol * bnorm {
            return Ok((x, it));
        }
        for t in 0..n {
            z[t] = r[t] * inv[t];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for t in 0..n {
            p[t] = z[t] + beta * p[t];
        }
    }
    let ap = apply(&x);
    let resid: Vec<f64> = b.iter().zip(&ap).map(|(u, v)| u - v).collect();
    Err(Error::SingularSystem {
        detail: format!(
            "conjugate gradient did not converge in {max_iter} iterations (relative residual {:.3e})",
            norm2(&resid) / bnorm
        ),
    })
}
