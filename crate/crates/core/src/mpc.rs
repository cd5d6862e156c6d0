//! Receding-horizon tracking controller on an identified reduced model.
//!
//! Decision vector `z = (x̃_1..x̃_N, u_0..u_{N−1}, s_1..s_N)`. Rows, in order:
//! model recursion (equalities, `x̃_0` folded into the first right-hand side),
//! input box, slack nonnegativity, then for each step a lower and an upper
//! strip bounding the lifted state on the sampled pixels, softened by `s_k`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dmdc::DmdcModel;
use crate::error::{Error, Result};
use crate::qpsolve::{BlockRowOperator, LinearOperator, QpProblem, QpSettings, QpSolver, QpStatus, WarmStart};

/// How the tracking term is written. Both give the same minimizer because
/// `U_r` has orthonormal columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrackingForm {
    /// `‖x̃_k − U_rᵀ(x* − b)‖²`.
    #[default]
    Reduced,
    /// `‖U_r x̃_k + b − x*‖²` (constant dropped).
    Lifted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    /// Scalar state box applied to every sampled pixel; `None` disables the
    /// state rows and slacks.
    pub state_box: Option<(f64, f64)>,
    pub q_weight: f64,
    pub r_weight: f64,
    pub state_penalty: f64,
    /// Every `constraint_stride`-th state component carries the state box.
    pub constraint_stride: usize,
    pub tracking: TrackingForm,
    pub qp: QpSettings,
}

impl MpcConfig {
    /// Defaults with the input box `[0, u_max]` on `q` inputs.
    pub fn new(q: usize, u_max: f64) -> Self {
        MpcConfig {
            horizon: 10,
            u_min: DVector::zeros(q),
            u_max: DVector::from_element(q, u_max),
            state_box: Some((15.0, 35.0)),
            q_weight: 1.0,
            r_weight: 1e-3,
            state_penalty: 1e3,
            constraint_stride: 1,
            tracking: TrackingForm::Reduced,
            qp: QpSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if self.u_min.len() != self.u_max.len() {
            return fail("u_min and u_max lengths differ".into());
        }
        if let Some(i) = (0..self.u_min.len()).find(|&i| !(self.u_min[i] <= self.u_max[i])) {
            return fail(format!("input bound {i}: u_min > u_max"));
        }
        if let Some((lo, hi)) = self.state_box {
            if !(lo < hi) {
                return fail(format!("state box [{lo}, {hi}] requires x_min < x_max"));
            }
        }
        for (name, v) in [
            ("q_weight", self.q_weight),
            ("r_weight", self.r_weight),
            ("state_penalty", self.state_penalty),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.constraint_stride == 0 {
            return fail("constraint_stride must be at least 1".into());
        }
        self.qp.validate()
    }
}

/// Decision variables under the reporting convention `N·r + (N−1)·q`.
pub fn variable_count(cfg: &MpcConfig, model: &DmdcModel) -> usize {
    cfg.horizon * model.r() + (cfg.horizon - 1) * model.q()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    n_steps: usize,
    r: usize,
    q: usize,
    slacks: usize,
    sampled: usize,
}

impl Layout {
    fn x(&self, k: usize) -> usize {
        (k - 1) * self.r
    }
    fn u(&self, k: usize) -> usize {
        self.n_steps * self.r + k * self.q
    }
    fn s(&self, k: usize) -> usize {
        self.n_steps * (self.r + self.q) + (k - 1)
    }
    fn dim(&self) -> usize {
        self.n_steps * (self.r + self.q) + self.slacks
    }
    /// Row groups as `(first row, rows per step)`, each repeated `n_steps` times.
    fn row_groups(&self) -> Vec<(usize, usize)> {
        let n = self.n_steps;
        let mut groups = vec![(0, self.r), (n * self.r, self.q)];
        if self.slacks > 0 {
            let base = n * (self.r + self.q);
            groups.push((base, 1));
            let st = base + n;
            // Lower and upper strips alternate per step, so one step spans both.
            groups.push((st, 2 * self.sampled));
        }
        groups
    }
    fn var_groups(&self) -> Vec<(usize, usize)> {
        let mut g = vec![(0, self.r), (self.n_steps * self.r, self.q)];
        if self.slacks > 0 {
            g.push((self.n_steps * (self.r + self.q), 1));
        }
        g
    }
}

/// Shifts per-step blocks forward by one step and repeats the last block.
fn shift_blocks(v: &DVector<f64>, groups: &[(usize, usize)], steps: usize) -> DVector<f64> {
    let mut out = v.clone();
    for &(base, size) in groups {
        for k in 0..steps - 1 {
            let src = v.rows(base + (k + 1) * size, size).into_owned();
            out.rows_mut(base + k * size, size).copy_from(&src);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// Set when the solver stopped without meeting its tolerances.
    pub warning: bool,
    /// Set when the returned input had to be projected onto the input box.
    pub clipped: bool,
    /// Reduced states `x̃_0..x̃_N` obtained by running the model on the planned inputs.
    pub predicted: DMatrix<f64>,
    /// Planned inputs `u_0..u_{N−1}` as columns.
    pub planned_inputs: DMatrix<f64>,
    pub max_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction {
    pub u0: DVector<f64>,
    pub diagnostics: Diagnostics,
}

pub struct MpcController {
    model: DmdcModel,
    config: MpcConfig,
    layout: Layout,
    reference: DVector<f64>,
    reference_reduced: DVector<f64>,
    sampled_rows: Vec<usize>,
    operator: Arc<BlockRowOperator>,
    solver: QpSolver,
    previous: Option<WarmStart>,
}

impl std::fmt::Debug for MpcController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MpcController")
            .field("layout", &self.layout)
            .field("config", &self.config)
            .finish()
    }
}

impl MpcController {
    pub fn new(model: DmdcModel, config: MpcConfig, reference: DVector<f64>) -> Result<Self> {
        config.validate()?;
        if config.u_min.len() != model.q() {
            return Err(Error::DimensionMismatch {
                context: "input bounds",
                expected: model.q(),
                found: config.u_min.len(),
            });
        }
        check_len("reference", model.n(), reference.len())?;
        let sampled_rows: Vec<usize> = if config.state_box.is_some() {
            (0..model.n()).step_by(config.constraint_stride).collect()
        } else {
            Vec::new()
        };
        let n_steps = config.horizon;
        let layout = Layout {
            n_steps,
            r: model.r(),
            q: model.q(),
            slacks: if config.state_box.is_some() { n_steps } else { 0 },
            sampled: sampled_rows.len(),
        };
        let operator = Arc::new(build_operator(&model, &layout, &sampled_rows)?);
        let p = hessian(&model, &config, &layout);
        let reference_reduced = model.reduce_state(&reference)?;
        let q = linear_cost(&model, &config, &layout, &reference, &reference_reduced);
        let x0 = DVector::zeros(model.r());
        let (l, u) = bounds(&model, &config, &layout, &x0);
        let problem = QpProblem::new(p, q, operator.clone(), l, u)?;
        let solver = QpSolver::new(problem, config.qp.clone())?;
        Ok(MpcController {
            model,
            config,
            layout,
            reference,
            reference_reduced,
            sampled_rows,
            operator,
            solver,
            previous: None,
        })
    }

    pub fn model(&self) -> &DmdcModel {
        &self.model
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.reference
    }

    /// `U_rᵀ(x* − b)`.
    pub fn reference_reduced(&self) -> &DVector<f64> {
        &self.reference_reduced
    }

    /// State components that carry the state box.
    pub fn sampled_rows(&self) -> &[usize] {
        &self.sampled_rows
    }

    pub fn operator(&self) -> &BlockRowOperator {
        &self.operator
    }

    pub fn set_reference(&mut self, reference: DVector<f64>) -> Result<()> {
        check_len("reference", self.model.n(), reference.len())?;
        self.reference_reduced = self.model.reduce_state(&reference)?;
        self.reference = reference;
        let q = linear_cost(&self.model, &self.config, &self.layout, &self.reference, &self.reference_reduced);
        self.solver.update_linear_cost(q)
    }

    /// Drops the warm start.
    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// The QP for the current reference and measured state `x_t`.
    pub fn build_problem(&self, x_t: &DVector<f64>) -> Result<QpProblem> {
        let x0 = self.model.reduce_state(x_t)?;
        let (l, u) = bounds(&self.model, &self.config, &self.layout, &x0);
        let mut prob = self.solver.problem().clone();
        prob.l = l;
        prob.u = u;
        Ok(prob)
    }

    pub fn control_action(&mut self, x_t: &DVector<f64>) -> Result<ControlAction> {
        let x0 = self.model.reduce_state(x_t)?;
        let (l, u) = bounds(&self.model, &self.config, &self.layout, &x0);
        self.solver.update_bounds(l, u)?;
        self.solver.set_warm_start(self.previous.take());
        let sol = self.solver.solve();
        if sol.status == QpStatus::Invalid {
            return Err(Error::InvalidData("MPC problem rejected by the QP solver".into()));
        }
        let lay = self.layout;
        let steps = lay.n_steps;
        self.previous = Some(WarmStart {
            z: shift_blocks(&sol.z, &lay.var_groups(), steps),
            y: shift_blocks(&sol.y, &lay.row_groups(), steps),
        });

        let mut planned = DMatrix::zeros(lay.q, steps);
        for k in 0..steps {
            planned.set_column(k, &sol.z.rows(lay.u(k), lay.q));
        }
        let raw = planned.column(0).into_owned();
        let u0 = raw.zip_zip_map(&self.config.u_min, &self.config.u_max, |v, lo, hi| v.clamp(lo, hi));
        let clipped = u0 != raw;
        planned.set_column(0, &u0);
        let mut predicted = DMatrix::zeros(lay.r, steps + 1);
        predicted.set_column(0, &x0);
        for k in 0..steps {
            let next = self.model.step_reduced(&predicted.column(k).into_owned(), &planned.column(k).into_owned())?;
            predicted.set_column(k + 1, &next);
        }
        let max_slack = (1..=lay.slacks).map(|k| sol.z[lay.s(k)]).fold(0.0, f64::max);
        Ok(ControlAction {
            diagnostics: Diagnostics {
                objective: self.solver.problem().objective(&sol.z),
                iterations: sol.iterations,
                status: sol.status,
                warning: sol.status != QpStatus::Solved,
                clipped,
                predicted,
                planned_inputs: planned,
                max_slack,
            },
            u0,
        })
    }
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

fn build_operator(model: &DmdcModel, lay: &Layout, sampled: &[usize]) -> Result<BlockRowOperator> {
    let (r, q) = (lay.r, lay.q);
    let mut op = BlockRowOperator::new(lay.dim());
    let eye_r = Arc::new(DMatrix::identity(r, r));
    let neg_a = Arc::new(-model.atil());
    let neg_b = Arc::new(-model.btil());
    for k in 0..lay.n_steps {
        let mut pieces = vec![(lay.x(k + 1), eye_r.clone()), (lay.u(k), neg_b.clone())];
        if k > 0 {
            pieces.push((lay.x(k), neg_a.clone()));
        }
        op.push_block(r, pieces)?;
    }
    let eye_q = Arc::new(DMatrix::identity(q, q));
    for k in 0..lay.n_steps {
        op.push_block(q, vec![(lay.u(k), eye_q.clone())])?;
    }
    if lay.slacks > 0 {
        op.push_block(lay.slacks, vec![(lay.s(1), Arc::new(DMatrix::identity(lay.slacks, lay.slacks)))])?;
        let basis = Arc::new(model.ur().select_rows(sampled));
        let plus = Arc::new(DMatrix::from_element(sampled.len(), 1, 1.0));
        let minus = Arc::new(DMatrix::from_element(sampled.len(), 1, -1.0));
        for k in 1..=lay.n_steps {
            op.push_block(sampled.len(), vec![(lay.x(k), basis.clone()), (lay.s(k), plus.clone())])?;
            op.push_block(sampled.len(), vec![(lay.x(k), basis.clone()), (lay.s(k), minus.clone())])?;
        }
    }
    Ok(op)
}

fn hessian(model: &DmdcModel, cfg: &MpcConfig, lay: &Layout) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(lay.dim(), lay.dim());
    let track = match cfg.tracking {
        TrackingForm::Reduced => DMatrix::identity(lay.r, lay.r) * (2.0 * cfg.q_weight),
        TrackingForm::Lifted => model.ur().tr_mul(model.ur()) * (2.0 * cfg.q_weight),
    };
    for k in 1..=lay.n_steps {
        p.view_mut((lay.x(k), lay.x(k)), (lay.r, lay.r)).copy_from(&track);
        for j in 0..lay.q {
            let i = lay.u(k - 1) + j;
            p[(i, i)] = 2.0 * cfg.r_weight;
        }
        if lay.slacks > 0 {
            p[(lay.s(k), lay.s(k))] = 2.0 * cfg.state_penalty;
        }
    }
    p
}

fn linear_cost(
    model: &DmdcModel,
    cfg: &MpcConfig,
    lay: &Layout,
    reference: &DVector<f64>,
    reference_reduced: &DVector<f64>,
) -> DVector<f64> {
    let target = match cfg.tracking {
        TrackingForm::Reduced => reference_reduced.clone(),
        TrackingForm::Lifted => model.ur().tr_mul(&reference.add_scalar(-model.baseline())),
    };
    let mut q = DVector::zeros(lay.dim());
    for k in 1..=lay.n_steps {
        q.rows_mut(lay.x(k), lay.r).copy_from(&(&target * (-2.0 * cfg.q_weight)));
    }
    q
}

fn bounds(model: &DmdcModel, cfg: &MpcConfig, lay: &Layout, x0: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let rows = lay.n_steps * (lay.r + lay.q) + lay.slacks * (1 + 2 * lay.sampled);
    let mut l = DVector::zeros(rows);
    let mut u = DVector::zeros(rows);
    let first = model.atil() * x0;
    l.rows_mut(0, lay.r).copy_from(&first);
    u.rows_mut(0, lay.r).copy_from(&first);
    let mut row = lay.n_steps * lay.r;
    for _ in 0..lay.n_steps {
        l.rows_mut(row, lay.q).copy_from(&cfg.u_min);
        u.rows_mut(row, lay.q).copy_from(&cfg.u_max);
        row += lay.q;
    }
    if let Some((lo, hi)) = cfg.state_box {
        for _ in 0..lay.slacks {
            u[row] = f64::INFINITY;
            row += 1;
        }
        let b = model.baseline();
        for _ in 0..lay.n_steps {
            l.rows_mut(row, lay.sampled).fill(lo - b);
            u.rows_mut(row, lay.sampled).fill(f64::INFINITY);
            row += lay.sampled;
            l.rows_mut(row, lay.sampled).fill(f64::NEG_INFINITY);
            u.rows_mut(row, lay.sampled).fill(hi - b);
            row += lay.sampled;
        }
    }
    debug_assert_eq!(row, rows);
    (l, u)
}

impl MpcController {
    /// `GᵀG` of the lower state strip of step `k` (unit weights) restricted to
    /// the `x̃_k` block, i.e. `U_sᵀU_s` for the sampled basis rows. `None`
    /// without a state box.
    pub fn state_strip_gram(&self, k: usize) -> Option<DMatrix<f64>> {
        let lay = self.layout;
        if lay.slacks == 0 || k == 0 || k > lay.n_steps {
            return None;
        }
        let strip = &self.operator.blocks()[2 * lay.n_steps + 1 + 2 * (k - 1)];
        let mut w = DVector::zeros(self.operator.rows());
        w.rows_mut(strip.row_offset, strip.rows).fill(1.0);
        let g = self.operator.weighted_gram(&w);
        Some(g.view((lay.x(k), lay.x(k)), (lay.r, lay.r)).into_owned())
    }
}
