//! Experiment orchestration: dataset generation, validation rollouts,
//! closed-loop runs, the sensor-proxy baseline and the (m, r) ablation grid.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::dmdc::{DmdcFactorization, DmdcModel};
use crate::error::{Error, Result};
use crate::matio::{encode_matrix, write_csv, write_matrix, RealMatrix, SnapshotDataset};
use crate::mpc::{MpcConfig, MpcController};
use crate::plant::{excitation_signal, DiffusionPlant, PlantConfig};
use crate::rng::fnv1a64;
use crate::svd::TruncationRule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    /// `base + amplitude·exp(−d²/(2σ²))` around `center` (window pixels, row then column).
    Gaussian {
        amplitude: f64,
        center: (f64, f64),
        sigma: f64,
    },
    Constant {
        level: f64,
    },
    /// The Gaussian capped at `slice`.
    SlicedGaussian {
        amplitude: f64,
        center: (f64, f64),
        sigma: f64,
        slice: f64,
    },
}

impl ReferenceKind {
    pub const NAMES: [&'static str; 3] = ["gaussian", "constant", "sliced-gaussian"];

    pub fn default_gaussian() -> Self {
        ReferenceKind::Gaussian {
            amplitude: 8.0,
            center: (24.5, 24.5),
            sigma: 16.0,
        }
    }

    pub fn default_constant() -> Self {
        ReferenceKind::Constant { level: 28.0 }
    }

    pub fn default_sliced() -> Self {
        ReferenceKind::SlicedGaussian {
            amplitude: 8.0,
            center: (24.5, 24.5),
            sigma: 16.0,
            slice: 26.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferenceKind::Gaussian { .. } => "gaussian",
            ReferenceKind::Constant { .. } => "constant",
            ReferenceKind::SlicedGaussian { .. } => "sliced-gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceField {
    pub kind: ReferenceKind,
    /// Column-stacked target over the `window × window` observation.
    pub realized: DVector<f64>,
}

impl ReferenceField {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }
}

/// Realizes a reference on a `window × window` image whose Gaussian rises
/// from `base`. Values outside `state_box` are rejected.
pub fn reference_field(kind: ReferenceKind, window: usize, base: f64, state_box: Option<(f64, f64)>) -> Result<ReferenceField> {
    let gauss = |amp: f64, (ci, cj): (f64, f64), sigma: f64, i: usize, j: usize| {
        let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
        base + amp * (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let value = |i: usize, j: usize| match kind {
        ReferenceKind::Gaussian { amplitude, center, sigma } => gauss(amplitude, center, sigma, i, j),
        ReferenceKind::Constant { level } => level,
        ReferenceKind::SlicedGaussian {
            amplitude,
            center,
            sigma,
            slice,
        } => gauss(amplitude, center, sigma, i, j).min(slice),
    };
    if let ReferenceKind::Gaussian { sigma, .. } | ReferenceKind::SlicedGaussian { sigma, .. } = kind {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("reference width must be positive, got {sigma}")));
        }
    }
    let realized = DVector::from_fn(window * window, |k, _| value(k % window, k / window));
    if realized.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("reference contains non-finite values".into()));
    }
    if let Some((lo, hi)) = state_box {
        let (mn, mx) = (realized.min(), realized.max());
        if mn < lo || mx > hi {
            return Err(Error::Config(format!(
                "{} reference spans [{mn}, {mx}], outside the state box [{lo}, {hi}]",
                kind.name()
            )));
        }
    }
    Ok(ReferenceField { kind, realized })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationConfig {
    pub steps: usize,
    pub hold: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            steps: 5000,
            hold: 50,
            lo: 0.0,
            hi: crate::plant::DEFAULT_U_MAX,
        }
    }
}

/// Simulates the plant from the uniform boundary-temperature state under the
/// excitation signal. Column `k` holds the observation before input `k` is applied.
pub fn generate_dataset(cfg: &PlantConfig, exc: &ExcitationConfig, seed: u64) -> Result<SnapshotDataset> {
    if exc.steps < 2 {
        return Err(Error::InsufficientSnapshots(exc.steps));
    }
    let plant = DiffusionPlant::new(cfg.clone())?;
    let inputs = excitation_signal(cfg.q(), exc.steps, exc.hold, exc.lo, exc.hi, seed)?;
    let mut states = RealMatrix::zeros(cfg.n(), exc.steps);
    let mut st = plant.initial_state();
    for k in 0..exc.steps {
        states.set_column(k, &plant.observe_inner(&st));
        if k + 1 < exc.steps {
            st = plant.step(&st, &inputs.column(k).into_owned())?;
        }
    }
    SnapshotDataset::new(states, inputs, cfg.dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    /// Largest pointwise error over all segments.
    pub max_abs_error: f64,
    /// Largest `‖prediction − truth‖_F / ‖truth − b‖_F` over all segments.
    pub relative_error: f64,
    pub segments: usize,
}

/// Starts of `count` evenly spaced `horizon`-step segments in `[first, len − horizon − 1]`.
pub fn validation_starts(first: usize, len: usize, horizon: usize, count: usize) -> Vec<usize> {
    if count == 0 || first + horizon >= len {
        return Vec::new();
    }
    let last = len - horizon - 1;
    if count == 1 || last == first {
        return vec![first];
    }
    (0..count).map(|i| first + i * (last - first) / (count - 1)).collect()
}

/// Open-loop rollouts of `model` against recorded data from each start.
pub fn validate(model: &DmdcModel, ds: &SnapshotDataset, starts: &[usize], horizon: usize) -> Result<ValidationReport> {
    if starts.is_empty() {
        return Err(Error::Config("no validation segment fits in the dataset".into()));
    }
    let mut max_abs: f64 = 0.0;
    let mut rel: f64 = 0.0;
    for &s in starts {
        if s + horizon >= ds.len() {
            return Err(Error::IndexOutOfRange {
                index: s + horizon,
                len: ds.len(),
            });
        }
        let truth = ds.states().columns(s, horizon + 1);
        let pred = model.rollout(&truth.column(0).into_owned(), &ds.inputs().columns(s, horizon).into_owned())?;
        let err = &pred - truth;
        max_abs = max_abs.max(err.amax());
        let scale = truth.add_scalar(-model.baseline()).norm();
        if scale > 0.0 {
            rel = rel.max(err.norm() / scale);
        }
    }
    Ok(ValidationReport {
        max_abs_error: max_abs,
        relative_error: rel,
        segments: starts.len(),
    })
}

/// Anything that maps an observed field to an input.
pub trait Policy {
    fn label(&self) -> String;
    /// Returns the input and the solver iteration count; flags solver warnings.
    fn act(&mut self, x: &DVector<f64>) -> Result<PolicyOutput>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub u: DVector<f64>,
    pub iterations: usize,
    pub warning: bool,
}

impl Policy for MpcController {
    fn label(&self) -> String {
        format!("dmd-mpc(r={}, s={})", self.model().r(), self.model().s())
    }

    fn act(&mut self, x: &DVector<f64>) -> Result<PolicyOutput> {
        let a = self.control_action(x)?;
        Ok(PolicyOutput {
            u: a.u0,
            iterations: a.diagnostics.iterations,
            warning: a.diagnostics.warning,
        })
    }
}

/// Standard MPC whose model state is the temperature at a few sensor pixels.
#[derive(Debug)]
pub struct ProxyMpc {
    sensors: Vec<usize>,
    inner: MpcController,
}

impl ProxyMpc {
    pub fn sensors(&self) -> &[usize] {
        &self.sensors
    }

    pub fn controller(&self) -> &MpcController {
        &self.inner
    }
}

impl Policy for ProxyMpc {
    fn label(&self) -> String {
        format!("proxy-mpc(sensors={})", self.sensors.len())
    }

    fn act(&mut self, x: &DVector<f64>) -> Result<PolicyOutput> {
        let local = x.select_rows(&self.sensors);
        self.inner.act(&local)
    }
}

/// Identifies a model on the sensor rows of `ds` and wraps it in a controller
/// tracking the reference sampled at the sensors.
pub fn proxy_controller(
    ds: &SnapshotDataset,
    sensors: &[usize],
    cfg: MpcConfig,
    reference: &DVector<f64>,
    s_rule: TruncationRule,
    r_rule: TruncationRule,
    baseline: f64,
) -> Result<ProxyMpc> {
    if reference.len() != ds.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "proxy reference",
            expected: ds.state_dim(),
            found: reference.len(),
        });
    }
    let local = ds.select_states(sensors)?;
    let f = DmdcFactorization::new(&local, s_rule, r_rule, baseline)?;
    let model = f.model(f.max_r())?;
    let inner = MpcController::new(model, cfg, reference.select_rows(sensors))?;
    Ok(ProxyMpc {
        sensors: sensors.to_vec(),
        inner,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunMetadata {
    pub controller: String,
    pub reference: String,
    pub config_hash: String,
    pub seed: u64,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Observations `x_0..x_T` as columns.
    pub states: RealMatrix,
    /// Applied inputs `u_0..u_{T−1}` as columns.
    pub inputs: RealMatrix,
    pub reference: DVector<f64>,
    pub state_box: Option<(f64, f64)>,
    pub l2_error: Vec<f64>,
    pub max_abs_error: Vec<f64>,
    pub violations: Vec<usize>,
    pub iterations: Vec<usize>,
    pub solver_warnings: usize,
    pub metadata: RunMetadata,
}

/// `(‖x* − x‖₂, ‖x* − x‖_∞, #pixels outside the box)` for one observation.
pub fn step_metrics(x: &DVector<f64>, reference: &DVector<f64>, state_box: Option<(f64, f64)>) -> (f64, f64, usize) {
    let e = reference - x;
    let viol = match state_box {
        Some((lo, hi)) => x.iter().filter(|&&v| v < lo || v > hi).count(),
        None => 0,
    };
    (e.norm(), e.amax(), viol)
}

impl RunRecord {
    pub fn steps(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn initial_error(&self) -> f64 {
        self.l2_error[0]
    }

    pub fn final_error(&self) -> f64 {
        *self.l2_error.last().expect("nonempty run")
    }

    pub fn total_violations(&self) -> usize {
        self.violations.iter().sum()
    }

    /// Largest difference between the stored metrics and metrics recomputed
    /// from the stored states (violation counts must match exactly).
    pub fn metric_drift(&self) -> f64 {
        let mut drift: f64 = 0.0;
        for k in 0..self.states.ncols() {
            let (l2, mx, v) = step_metrics(&self.states.column(k).into_owned(), &self.reference, self.state_box);
            drift = drift.max((l2 - self.l2_error[k]).abs()).max((mx - self.max_abs_error[k]).abs());
            if v != self.violations[k] {
                return f64::INFINITY;
            }
        }
        drift
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("step,l2_error,max_abs_error,violations\n");
        for k in 0..self.l2_error.len() {
            let _ = writeln!(
                s,
                "{k},{:.16e},{:.16e},{}",
                self.l2_error[k], self.max_abs_error[k], self.violations[k]
            );
        }
        s
    }

    /// Writes `states.dmdmat`, `inputs.dmdmat`, `reference.dmdmat`,
    /// `metrics.csv`, `inputs.csv` and `run.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix(dir.join("states.dmdmat"), &self.states)?;
        write_matrix(dir.join("inputs.dmdmat"), &self.inputs)?;
        write_matrix(dir.join("reference.dmdmat"), &RealMatrix::from_column_slice(self.reference.len(), 1, self.reference.as_slice()))?;
        write_csv(dir.join("inputs.csv"), &self.inputs)?;
        let p = dir.join("metrics.csv");
        fs::write(&p, self.metrics_csv()).map_err(|e| Error::io(&p, e))?;
        let m = &self.metadata;
        let (lo, hi) = self.state_box.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let meta = format!(
            "controller = {}\nreference = {}\nsteps = {}\nseed = {}\nconfig_hash = {}\nmodel_id = {}\nx_min = {:?}\nx_max = {:?}\ninitial_l2_error = {:?}\nfinal_l2_error = {:?}\ntotal_violations = {}\nsolver_warnings = {}\n",
            m.controller,
            m.reference,
            self.steps(),
            m.seed,
            m.config_hash,
            m.model_id,
            lo,
            hi,
            self.initial_error(),
            self.final_error(),
            self.total_violations(),
            self.solver_warnings
        );
        let p = dir.join("run.txt");
        fs::write(&p, meta).map_err(|e| Error::io(&p, e))
    }
}

/// Runs `steps` control steps from the plant's uniform initial state.
pub fn run_closed_loop(
    plant: &DiffusionPlant,
    policy: &mut dyn Policy,
    reference: &ReferenceField,
    steps: usize,
    state_box: Option<(f64, f64)>,
) -> Result<RunRecord> {
    let cfg = plant.config();
    if reference.realized.len() != cfg.n() {
        return Err(Error::DimensionMismatch {
            context: "reference field",
            expected: cfg.n(),
            found: reference.realized.len(),
        });
    }
    let mut states = RealMatrix::zeros(cfg.n(), steps + 1);
    let mut inputs = RealMatrix::zeros(cfg.q(), steps);
    let mut l2 = Vec::with_capacity(steps + 1);
    let mut mx = Vec::with_capacity(steps + 1);
    let mut viol = Vec::with_capacity(steps + 1);
    let mut iterations = Vec::with_capacity(steps);
    let mut warnings = 0;
    let mut st = plant.initial_state();
    for k in 0..=steps {
        let x = plant.observe_inner(&st);
        let (a, b, c) = step_metrics(&x, &reference.realized, state_box);
        l2.push(a);
        mx.push(b);
        viol.push(c);
        states.set_column(k, &x);
        if k == steps {
            break;
        }
        let out = policy.act(&x)?;
        warnings += usize::from(out.warning);
        iterations.push(out.iterations);
        inputs.set_column(k, &out.u);
        st = plant.step(&st, &out.u)?;
    }
    Ok(RunRecord {
        states,
        inputs,
        reference: reference.realized.clone(),
        state_box,
        l2_error: l2,
        max_abs_error: mx,
        violations: viol,
        iterations,
        solver_warnings: warnings,
        metadata: RunMetadata {
            controller: policy.label(),
            reference: reference.name().to_string(),
            ..RunMetadata::default()
        },
    })
}

/// Stable identifier of a model: FNV-1a of its encoded reduced matrices.
pub fn model_id(model: &DmdcModel) -> String {
    let mut bytes = Vec::new();
    for m in [model.ur(), model.atil(), model.btil()] {
        bytes.extend(encode_matrix(m).unwrap_or_default());
    }
    format!("{:016x}", fnv1a64(&bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub m: usize,
    pub r: usize,
    /// Omega truncation actually used.
    pub s: usize,
    pub errors: Vec<f64>,
}

impl AblationCell {
    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("nonempty run")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn get(&self, m: usize, r: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.m == m && c.r == r)
    }

    /// `m,r,s,final_error` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,r,s,final_error\n");
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{},{:.16e}", c.m, c.r, c.s, c.final_error());
        }
        s
    }
}

/// Like [`DmdcFactorization::new`], but a fixed `s` above the numerical rank of
/// the snapshot matrix falls back to that rank. Short records can have fewer
/// independent directions than the requested order.
pub fn factorize_capped(
    ds: &SnapshotDataset,
    s_rule: TruncationRule,
    r_rule: TruncationRule,
    baseline: f64,
) -> Result<DmdcFactorization> {
    match DmdcFactorization::new(ds, s_rule, r_rule, baseline) {
        Err(Error::IllConditioned { rank, .. }) if matches!(s_rule, TruncationRule::Fixed(_)) && rank > 0 => {
            DmdcFactorization::new(ds, TruncationRule::Fixed(rank), r_rule, baseline)
        }
        other => other,
    }
}

/// Settings shared by every cell of an ablation.
#[derive(Debug, Clone)]
pub struct AblationSpec<'a> {
    pub sizes: &'a [usize],
    pub orders: &'a [usize],
    pub s_rule: TruncationRule,
    pub baseline: f64,
    pub mpc: &'a MpcConfig,
    pub steps: usize,
}

/// Trains one model per `(m, r)` cell on the first `m` snapshots and runs the
/// closed loop. The decompositions are computed once per `m`. No random draws
/// are involved, so cells are reproducible.
pub fn ablation(
    ds: &SnapshotDataset,
    plant: &DiffusionPlant,
    reference: &ReferenceField,
    spec: &AblationSpec<'_>,
) -> Result<AblationTable> {
    let r_max = spec.orders.iter().copied().max().ok_or_else(|| Error::Config("no model orders given".into()))?;
    let mut cells = Vec::new();
    for &m in spec.sizes {
        if m > ds.len() {
            return Err(Error::Config(format!("ablation size {m} exceeds the dataset ({})", ds.len())));
        }
        let train = ds.columns(0..m)?;
        let f = factorize_capped(&train, spec.s_rule, TruncationRule::Fixed(r_max), spec.baseline)?;
        for &r in spec.orders {
            let model = f.model(r)?;
            let mut ctrl = MpcController::new(model, spec.mpc.clone(), reference.realized.clone())?;
            let rec = run_closed_loop(plant, &mut ctrl, reference, spec.steps, spec.mpc.state_box)?;
            cells.push(AblationCell {
                m,
                r,
                s: f.s(),
                errors: rec.l2_error,
            });
        }
    }
    Ok(AblationTable { cells })
}
