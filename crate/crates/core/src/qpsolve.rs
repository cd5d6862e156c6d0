//! Convex QP solver for `min ½zᵀPz + qᵀz  s.t.  l ≤ Gz ≤ u` by
//! alternating-direction iterations with over-relaxation and adaptive,
//! per-row penalties. `G` is accessed only through [`LinearOperator`].

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Penalty multiplier applied to equality rows (`l = u`).
const EQUALITY_RHO_SCALE: f64 = 1e3;

type BestIterate = (f64, DVector<f64>, DVector<f64>, f64, f64);
/// Penalty used for rows with no finite bound.
const FREE_ROW_RHO: f64 = 1e-6;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = G x`.
    fn apply(&self, x: &DVector<f64>, out: &mut DVector<f64>);
    /// `out = Gᵀ y`.
    fn apply_transpose(&self, y: &DVector<f64>, out: &mut DVector<f64>);

    /// `Gᵀ diag(w) G`, formed column by column unless overridden.
    fn weighted_gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let g = self.to_dense();
        let mut wg = g.clone();
        for (i, wi) in w.iter().enumerate() {
            wg.row_mut(i).scale_mut(*wi);
        }
        g.tr_mul(&wg)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.rows(), self.cols());
        let mut e = DVector::zeros(self.cols());
        let mut col = DVector::zeros(self.rows());
        for j in 0..self.cols() {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            g.set_column(j, &col);
            e[j] = 0.0;
        }
        g
    }
}

impl LinearOperator for DMatrix<f64> {
    fn rows(&self) -> usize {
        self.nrows()
    }
    fn cols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, self, x, 0.0);
    }
    fn apply_transpose(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv_tr(1.0, self, y, 0.0);
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// One horizontal strip of a [`BlockRowOperator`]: `rows` consecutive rows
/// made of dense pieces placed at given column offsets.
#[derive(Debug, Clone)]
pub struct RowBlock {
    pub row_offset: usize,
    pub rows: usize,
    pub pieces: Vec<(usize, Arc<DMatrix<f64>>)>,
}

/// Operator assembled from dense pieces laid out in row strips. Pieces may be
/// shared between strips, so a large basis appearing in many strips is stored once.
#[derive(Debug, Clone)]
pub struct BlockRowOperator {
    rows: usize,
    cols: usize,
    blocks: Vec<RowBlock>,
}

impl BlockRowOperator {
    pub fn new(cols: usize) -> Self {
        BlockRowOperator {
            rows: 0,
            cols,
            blocks: Vec::new(),
        }
    }

    /// Appends a strip; every piece must have `rows` rows and fit in the columns.
    /// Returns the row offset of the new strip.
    pub fn push_block(&mut self, rows: usize, pieces: Vec<(usize, Arc<DMatrix<f64>>)>) -> Result<usize> {
        for (off, piece) in &pieces {
            if piece.nrows() != rows {
                return Err(Error::DimensionMismatch {
                    context: "operator block rows",
                    expected: rows,
                    found: piece.nrows(),
                });
            }
            if off + piece.ncols() > self.cols {
                return Err(Error::DimensionMismatch {
                    context: "operator block columns",
                    expected: self.cols,
                    found: off + piece.ncols(),
                });
            }
        }
        let row_offset = self.rows;
        self.blocks.push(RowBlock {
            row_offset,
            rows,
            pieces,
        });
        self.rows += rows;
        Ok(row_offset)
    }

    pub fn blocks(&self) -> &[RowBlock] {
        &self.blocks
    }
}

impl LinearOperator for BlockRowOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        for b in &self.blocks {
            let mut dst = out.rows_mut(b.row_offset, b.rows);
            for (off, m) in &b.pieces {
                dst.gemv(1.0, m.as_ref(), &x.rows(*off, m.ncols()), 1.0);
            }
        }
    }

    fn apply_transpose(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        for b in &self.blocks {
            let src = y.rows(b.row_offset, b.rows);
            for (off, m) in &b.pieces {
                out.rows_mut(*off, m.ncols()).gemv_tr(1.0, m.as_ref(), &src, 1.0);
            }
        }
    }

    fn weighted_gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut gram = DMatrix::zeros(self.cols, self.cols);
        for b in &self.blocks {
            let wb = w.rows(b.row_offset, b.rows);
            let scaled: Vec<DMatrix<f64>> = b
                .pieces
                .iter()
                .map(|(_, m)| {
                    let mut s = m.as_ref().clone();
                    for (i, wi) in wb.iter().enumerate() {
                        s.row_mut(i).scale_mut(*wi);
                    }
                    s
                })
                .collect();
            for (oa, ma) in &b.pieces {
                for (sb, (ob, _)) in scaled.iter().zip(&b.pieces) {
                    let blk = ma.tr_mul(sb);
                    let mut dst = gram.view_mut((*oa, *ob), (blk.nrows(), blk.ncols()));
                    dst += &blk;
                }
            }
        }
        gram
    }
}

#[derive(Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub g: Arc<dyn LinearOperator>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl std::fmt::Debug for QpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QpProblem")
            .field("dim", &self.dim())
            .field("rows", &self.g.rows())
            .finish()
    }
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        g: Arc<dyn LinearOperator>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self> {
        let prob = QpProblem { p, q, g, l, u };
        prob.check_shapes()?;
        Ok(prob)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.q.len();
        let dims = [
            ("P rows", n, self.p.nrows()),
            ("P cols", n, self.p.ncols()),
            ("G cols", n, self.g.cols()),
            ("lower bounds", self.g.rows(), self.l.len()),
            ("upper bounds", self.g.rows(), self.u.len()),
        ];
        for (context, expected, found) in dims {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    found,
                });
            }
        }
        check_bounds(&self.l, &self.u)
    }

    /// Symmetry and positive-semidefiniteness of `P`: a Cholesky factorization of
    /// `P + δI` must exist for a tiny relative shift `δ`.
    fn p_is_psd(&self) -> bool {
        let scale = self.p.amax().max(1.0);
        let asym = (&self.p - self.p.transpose()).amax();
        if !(asym <= 1e-8 * scale) || self.p.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let mut shifted = self.p.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += 1e-8 * scale;
        }
        Cholesky::new(shifted).is_some()
    }
}

fn check_bounds(l: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    for (i, (lo, hi)) in l.iter().zip(u.iter()).enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
            return Err(Error::InvalidData(format!("bad bounds at row {i}: [{lo}, {hi}]")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Over-relaxation parameter in `(0, 2)`.
    pub alpha: f64,
    /// Iterations between penalty updates; `0` disables adaptation.
    pub adaptive_interval: usize,
    pub warm_start: Option<WarmStart>,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            rho: 0.1,
            sigma: 1e-6,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            max_iter: 4000,
            alpha: 1.6,
            adaptive_interval: 25,
            warm_start: None,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("sigma", self.sigma),
            ("eps_abs", self.eps_abs),
            ("eps_rel", self.eps_rel),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 2), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
}

/// Optimality residuals of `(z, y)`. `y_i > 0` pairs with the upper bound and
/// `y_i < 0` with the lower one; a multiplier on an infinite bound counts in
/// full as complementarity violation.
pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let mut gz = DVector::zeros(p.g.rows());
    p.g.apply(&sol.z, &mut gz);
    let mut gty = DVector::zeros(p.dim());
    p.g.apply_transpose(&sol.y, &mut gty);
    let stationarity = (&p.p * &sol.z + &p.q + gty).amax();
    let primal = gz
        .iter()
        .enumerate()
        .map(|(i, v)| (v - v.clamp(p.l[i], p.u[i])).abs())
        .fold(0.0, f64::max);
    KktResiduals {
        stationarity,
        primal_feasibility: primal,
        complementarity: complementarity(&gz, &sol.y, &p.l, &p.u),
    }
}

fn complementarity(gz: &DVector<f64>, y: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let mut comp: f64 = 0.0;
    for i in 0..gz.len() {
        let yi = y[i];
        let bound = if yi > 0.0 { u[i] } else { l[i] };
        let term = if yi == 0.0 {
            0.0
        } else if bound.is_finite() {
            (yi * (gz[i] - bound)).abs()
        } else {
            yi.abs()
        };
        comp = comp.max(term);
    }
    comp
}

/// Solves once with a fresh solver.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    match QpSolver::new(problem.clone(), settings.clone()) {
        Ok(mut s) => s.solve(),
        Err(_) => invalid(problem),
    }
}

fn invalid(problem: &QpProblem) -> QpSolution {
    QpSolution {
        z: DVector::zeros(problem.dim()),
        y: DVector::zeros(problem.l.len()),
        status: QpStatus::Invalid,
        iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
    }
}

/// Solver instance owning the problem and the cached factorization of
/// `P + σI + Gᵀ diag(ρ) G`, reused across bound and warm-start changes.
pub struct QpSolver {
    problem: QpProblem,
    settings: QpSettings,
    valid: bool,
    rho: f64,
    rho_vec: DVector<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
    factorizations: usize,
}

impl QpSolver {
    pub fn new(problem: QpProblem, settings: QpSettings) -> Result<Self> {
        settings.validate()?;
        problem.check_shapes()?;
        let valid = problem.p_is_psd();
        let rho = settings.rho;
        let mut solver = QpSolver {
            rho_vec: DVector::zeros(problem.l.len()),
            problem,
            settings,
            valid,
            rho,
            factor: None,
            factorizations: 0,
        };
        if valid {
            solver.refactor(rho)?;
        }
        Ok(solver)
    }

    pub fn problem(&self) -> &QpProblem {
        &self.problem
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn set_warm_start(&mut self, warm: Option<WarmStart>) {
        self.settings.warm_start = warm;
    }

    /// Current scalar penalty (after any adaptation).
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Number of factorizations performed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn update_linear_cost(&mut self, q: DVector<f64>) -> Result<()> {
        if q.len() != self.problem.dim() {
            return Err(Error::DimensionMismatch {
                context: "linear cost",
                expected: self.problem.dim(),
                found: q.len(),
            });
        }
        self.problem.q = q;
        Ok(())
    }

    /// Replaces the bounds. The factorization is kept unless a row changes
    /// between equality, inequality and free.
    pub fn update_bounds(&mut self, l: DVector<f64>, u: DVector<f64>) -> Result<()> {
        if l.len() != self.problem.l.len() || u.len() != self.problem.u.len() {
            return Err(Error::DimensionMismatch {
                context: "constraint bounds",
                expected: self.problem.l.len(),
                found: l.len(),
            });
        }
        check_bounds(&l, &u)?;
        let changed = (0..l.len()).any(|i| row_kind(l[i], u[i]) != row_kind(self.problem.l[i], self.problem.u[i]));
        self.problem.l = l;
        self.problem.u = u;
        if changed && self.valid {
            self.refactor(self.rho)?;
        }
        Ok(())
    }

    fn refactor(&mut self, rho: f64) -> Result<()> {
        self.rho = rho;
        for i in 0..self.rho_vec.len() {
            self.rho_vec[i] = match row_kind(self.problem.l[i], self.problem.u[i]) {
                RowKind::Equality => EQUALITY_RHO_SCALE * rho,
                RowKind::Free => FREE_ROW_RHO,
                RowKind::Inequality => rho,
            };
        }
        let mut k = self.problem.g.weighted_gram(&self.rho_vec);
        k += &self.problem.p;
        for i in 0..k.nrows() {
            k[(i, i)] += self.settings.sigma;
        }
        self.factor = Some(Cholesky::new(k).ok_or_else(|| {
            Error::InvalidData("QP system matrix is not positive definite".into())
        })?);
        self.factorizations += 1;
        Ok(())
    }

    pub fn solve(&mut self) -> QpSolution {
        if !self.valid {
            return invalid(&self.problem);
        }
        let st = self.settings.clone();
        let alpha = st.alpha;
        let prob = &self.problem;
        let (n, m) = (prob.dim(), prob.l.len());

        let (mut x, mut y) = match &st.warm_start {
            Some(w) if w.z.len() == n && w.y.len() == m => (w.z.clone(), w.y.clone()),
            _ => (DVector::zeros(n), DVector::zeros(m)),
        };
        let mut gx = DVector::zeros(m);
        prob.g.apply(&x, &mut gx);
        let mut zc = gx.zip_zip_map(&prob.l, &prob.u, |v, lo, hi| v.clamp(lo, hi));

        let mut rhs = DVector::zeros(n);
        let mut gt_buf = DVector::zeros(n);
        let mut gxt = DVector::zeros(m);
        let mut gty = DVector::zeros(n);
        // (merit, x, y, r_prim, r_dual) of the best iterate so far.
        let mut best: Option<BestIterate> = None;
        let mut pending_rho = None;

        for it in 1..=st.max_iter {
            if let Some(r) = pending_rho.take() {
                if self.refactor(r).is_err() {
                    return invalid(&self.problem);
                }
            }
            let prob = &self.problem;
            let rho_vec = &self.rho_vec;
            let factor = self.factor.as_ref().expect("factored");

            // x̃ = K⁻¹ (σx − q + Gᵀ(ρ∘z − y))
            let w = rho_vec.component_mul(&zc) - &y;
            prob.g.apply_transpose(&w, &mut gt_buf);
            rhs.copy_from(&(&x * st.sigma - &prob.q + &gt_buf));
            factor.solve_mut(&mut rhs);
            prob.g.apply(&rhs, &mut gxt);

            x = &rhs * alpha + &x * (1.0 - alpha);
            gx = &gxt * alpha + &gx * (1.0 - alpha);
            let zrel = &gxt * alpha + &zc * (1.0 - alpha);
            let mut znew = zrel.clone();
            for i in 0..m {
                znew[i] = (zrel[i] + y[i] / rho_vec[i]).clamp(prob.l[i], prob.u[i]);
            }
            y += rho_vec.component_mul(&(zrel - &znew));
            zc = znew;

            prob.g.apply_transpose(&y, &mut gty);
            let px = &prob.p * &x;
            let r_prim = (&gx - &zc).amax();
            let r_dual = (&px + &prob.q + &gty).amax();
            let prim_scale = gx.amax().max(zc.amax());
            let dual_scale = px.amax().max(gty.amax()).max(prob.q.amax());
            let eps_prim = st.eps_abs + st.eps_rel * prim_scale;
            let eps_dual = st.eps_abs + st.eps_rel * dual_scale;
            if !(r_prim.is_finite() && r_dual.is_finite()) {
                break;
            }
            // Complementarity is checked as well so that a solved point also
            // meets the contract of `kkt_residuals`.
            if r_prim <= eps_prim
                && r_dual <= eps_dual
                && complementarity(&gx, &y, &prob.l, &prob.u) <= st.eps_abs + st.eps_rel * prim_scale.max(dual_scale)
            {
                return QpSolution {
                    z: x,
                    y,
                    status: QpStatus::Solved,
                    iterations: it,
                    primal_residual: r_prim,
                    dual_residual: r_dual,
                };
            }
            let merit = (r_prim / eps_prim).max(r_dual / eps_dual);
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, x.clone(), y.clone(), r_prim, r_dual));
            }
            if st.adaptive_interval > 0 && it % st.adaptive_interval == 0 {
                let num = r_prim / prim_scale.max(1e-30);
                let den = r_dual / dual_scale.max(1e-30);
                if den > 0.0 && num > 0.0 {
                    let ratio = (num / den).sqrt().clamp(0.1, 10.0);
                    if !(0.2..=5.0).contains(&ratio) {
                        pending_rho = Some((self.rho * ratio).clamp(RHO_MIN, RHO_MAX));
                    }
                }
            }
        }
        match best {
            Some((_, z, y, rp, rd)) => QpSolution {
                z,
                y,
                status: QpStatus::MaxIterations,
                iterations: st.max_iter,
                primal_residual: rp,
                dual_residual: rd,
            },
            None => QpSolution {
                status: QpStatus::MaxIterations,
                iterations: st.max_iter,
                ..invalid(&self.problem)
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
    Free,
}

fn row_kind(l: f64, u: f64) -> RowKind {
    if l == u {
        RowKind::Equality
    } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
        RowKind::Free
    } else {
        RowKind::Inequality
    }
}
