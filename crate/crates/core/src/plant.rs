//! Two-dimensional heat equation on a square grid with Dirichlet boundary,
//! actuated by a lattice of heat sources and observed on an inner window.
//!
//! Time stepping is backward Euler with the centered 5-point Laplacian:
//! `(I − α·dt·L) θ⁺ = θ + dt·S u`, where `θ = ξ − ξ_boundary` on the interior
//! nodes. Working with the boundary offset makes the boundary homogeneous.
//!
//! Interior node `(i, j)` (grid row `i`, grid column `j`, both in `1..G-1`)
//! has index `(j − 1)·(G − 2) + (i − 1)`, so the system matrix is banded with
//! half-bandwidth `G − 2`.

use nalgebra::{DMatrix, DVector};

use crate::banded::BandCholesky;
use crate::error::{Error, Result};
use crate::matio::RealMatrix;
use crate::rng::{streams, Stream};

/// Input bound such that the steady state under all sources at this level
/// peaks at 35 °C for the default configuration (see [`calibrate_u_max`]).
pub const DEFAULT_U_MAX: f64 = 69.865_896_491_247_78;

/// Peak steady-state temperature targeted by the default `u_max`.
pub const CALIBRATION_PEAK: f64 = 35.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    /// Nodes per side, boundary included.
    pub grid: usize,
    pub spacing: f64,
    pub alpha: f64,
    pub dt: f64,
    pub boundary_temp: f64,
    /// Grid row/column of the first observed node.
    pub window_offset: usize,
    /// Observed nodes per side.
    pub window_size: usize,
    /// Grid `(row, col)` of each source.
    pub actuators: Vec<(usize, usize)>,
    /// Standard deviation (in nodes) of each source's Gaussian footprint; `0`
    /// gives point sources.
    pub footprint_radius: f64,
    pub u_max: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            grid: 71,
            spacing: 1.0,
            alpha: 20.0,
            dt: 1.0,
            boundary_temp: 20.0,
            window_offset: 11,
            window_size: 50,
            actuators: lattice(11, 50, 6),
            footprint_radius: 6.0,
            u_max: DEFAULT_U_MAX,
        }
    }
}

/// `per_axis²` grid positions at window coordinates `round(w·(2i−1)/(2·per_axis))`,
/// ordered row-major over the lattice.
pub fn lattice(offset: usize, window: usize, per_axis: usize) -> Vec<(usize, usize)> {
    let coords: Vec<usize> = (1..=per_axis)
        .map(|i| offset + (window as f64 * (2 * i - 1) as f64 / (2 * per_axis) as f64).round() as usize)
        .collect();
    coords
        .iter()
        .flat_map(|&a| coords.iter().map(move |&b| (a, b)))
        .collect()
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.grid < 3 {
            return fail(format!("grid must have at least 3 nodes per side, got {}", self.grid));
        }
        for (name, v) in [("alpha", self.alpha), ("dt", self.dt), ("spacing", self.spacing)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.boundary_temp.is_finite() {
            return fail("boundary_temp must be finite".into());
        }
        if !(self.footprint_radius >= 0.0 && self.footprint_radius.is_finite()) {
            return fail("footprint_radius must be nonnegative".into());
        }
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return fail(format!("u_max must be positive, got {}", self.u_max));
        }
        let end = self.window_offset + self.window_size;
        if self.window_size == 0 || self.window_offset < 1 || end > self.grid - 1 {
            return fail(format!(
                "inner window {}..{} must lie strictly inside the {}-node grid",
                self.window_offset, end, self.grid
            ));
        }
        if self.actuators.is_empty() {
            return fail("at least one actuator is required".into());
        }
        for &(i, j) in &self.actuators {
            let inside = |c: usize| c >= self.window_offset && c < end;
            if !(inside(i) && inside(j)) {
                return fail(format!("actuator ({i}, {j}) lies outside the inner window"));
            }
        }
        Ok(())
    }

    pub fn interior(&self) -> usize {
        self.grid - 2
    }

    /// Observed state dimension.
    pub fn n(&self) -> usize {
        self.window_size * self.window_size
    }

    /// Number of inputs.
    pub fn q(&self) -> usize {
        self.actuators.len()
    }

    /// Index of grid node `(i, j)` in the observation vector.
    pub fn window_index(&self, i: usize, j: usize) -> Option<usize> {
        let (o, w) = (self.window_offset, self.window_size);
        (i >= o && i < o + w && j >= o && j < o + w).then(|| (j - o) * w + (i - o))
    }

    /// Observation indices of the actuator nodes, in actuator order.
    pub fn actuator_pixels(&self) -> Vec<usize> {
        self.actuators
            .iter()
            .map(|&(i, j)| self.window_index(i, j).expect("validated actuator"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// Full `grid × grid` temperature field, boundary included.
    pub field: RealMatrix,
    pub time: f64,
}

impl PlantState {
    pub fn uniform(cfg: &PlantConfig, temp: f64) -> Self {
        let mut field = RealMatrix::from_element(cfg.grid, cfg.grid, temp);
        set_boundary(&mut field, cfg.boundary_temp);
        PlantState { field, time: 0.0 }
    }
}

fn set_boundary(field: &mut RealMatrix, temp: f64) {
    let g = field.nrows();
    for k in 0..g {
        field[(0, k)] = temp;
        field[(g - 1, k)] = temp;
        field[(k, 0)] = temp;
        field[(k, g - 1)] = temp;
    }
}

/// Source-distribution matrix `S` (interior nodes × inputs).
pub fn source_matrix(cfg: &PlantConfig) -> RealMatrix {
    let ni = cfg.interior();
    let mut s = RealMatrix::zeros(ni * ni, cfg.q());
    for (k, &(ai, aj)) in cfg.actuators.iter().enumerate() {
        if cfg.footprint_radius == 0.0 {
            s[((aj - 1) * ni + (ai - 1), k)] = 1.0;
            continue;
        }
        let two_var = 2.0 * cfg.footprint_radius * cfg.footprint_radius;
        let mut col = s.column_mut(k);
        for j in 1..=ni {
            for i in 1..=ni {
                let d2 = (i as f64 - ai as f64).powi(2) + (j as f64 - aj as f64).powi(2);
                col[(j - 1) * ni + (i - 1)] = (-d2 / two_var).exp();
            }
        }
        let total = col.sum();
        col.unscale_mut(total);
    }
    s
}

/// Entry `(a, b)` of `c0·I − c1·L` (lower band), with `L` the Dirichlet
/// 5-point Laplacian on `ni × ni` interior nodes and unit spacing folded into `c1`.
fn shifted_laplacian(ni: usize, c0: f64, c1: f64) -> impl Fn(usize, usize) -> f64 {
    move |a, b| {
        if a == b {
            c0 + 4.0 * c1
        } else if (a - b == 1 && a % ni != 0) || a - b == ni {
            -c1
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionPlant {
    cfg: PlantConfig,
    step_factor: BandCholesky,
    source: RealMatrix,
}

impl DiffusionPlant {
    pub fn new(cfg: PlantConfig) -> Result<Self> {
        cfg.validate()?;
        let ni = cfg.interior();
        let c1 = cfg.alpha * cfg.dt / (cfg.spacing * cfg.spacing);
        let step_factor = BandCholesky::factor(ni * ni, ni, shifted_laplacian(ni, 1.0, c1))?;
        let source = source_matrix(&cfg);
        Ok(DiffusionPlant {
            cfg,
            step_factor,
            source,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn source(&self) -> &RealMatrix {
        &self.source
    }

    pub fn initial_state(&self) -> PlantState {
        PlantState::uniform(&self.cfg, self.cfg.boundary_temp)
    }

    fn interior_offsets(&self, st: &PlantState) -> Result<Vec<f64>> {
        let g = self.cfg.grid;
        if st.field.shape() != (g, g) {
            return Err(Error::DimensionMismatch {
                context: "plant field",
                expected: g,
                found: st.field.nrows(),
            });
        }
        let ni = self.cfg.interior();
        let mut v = Vec::with_capacity(ni * ni);
        for j in 1..=ni {
            for i in 1..=ni {
                v.push(st.field[(i, j)] - self.cfg.boundary_temp);
            }
        }
        Ok(v)
    }

    fn to_state(&self, theta: &[f64], time: f64) -> PlantState {
        let ni = self.cfg.interior();
        let mut field = RealMatrix::from_element(self.cfg.grid, self.cfg.grid, self.cfg.boundary_temp);
        for j in 1..=ni {
            for i in 1..=ni {
                field[(i, j)] += theta[(j - 1) * ni + (i - 1)];
            }
        }
        PlantState { field, time }
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.cfg.q() {
            return Err(Error::DimensionMismatch {
                context: "plant input",
                expected: self.cfg.q(),
                found: u.len(),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("plant input must be finite".into()));
        }
        Ok(())
    }

    /// Advances one backward-Euler step.
    pub fn step(&self, st: &PlantState, u: &DVector<f64>) -> Result<PlantState> {
        self.check_input(u)?;
        let mut theta = self.interior_offsets(st)?;
        let heat = &self.source * u;
        for (t, h) in theta.iter_mut().zip(heat.iter()) {
            *t += self.cfg.dt * h;
        }
        self.step_factor.solve_in_place(&mut theta);
        Ok(self.to_state(&theta, st.time + self.cfg.dt))
    }

    /// Equilibrium field for a constant input: `−α L θ = S u`.
    pub fn steady_state(&self, u: &DVector<f64>) -> Result<PlantState> {
        self.check_input(u)?;
        let ni = self.cfg.interior();
        let c1 = self.cfg.alpha / (self.cfg.spacing * self.cfg.spacing);
        let f = BandCholesky::factor(ni * ni, ni, shifted_laplacian(ni, 0.0, c1))?;
        let mut theta: Vec<f64> = (&self.source * u).iter().copied().collect();
        f.solve_in_place(&mut theta);
        Ok(self.to_state(&theta, 0.0))
    }

    /// Column-stacked inner-window observation.
    pub fn observe_inner(&self, st: &PlantState) -> DVector<f64> {
        observe_inner(&self.cfg, st)
    }
}

pub fn observe_inner(cfg: &PlantConfig, st: &PlantState) -> DVector<f64> {
    let (o, w) = (cfg.window_offset, cfg.window_size);
    DVector::from_fn(w * w, |k, _| st.field[(o + k % w, o + k / w)])
}

/// Piecewise-constant excitation: for each block of `hold` steps and each
/// input (block-major, then input order), one draw uniform on `[lo, hi]` from
/// the `excitation` substream of `seed`.
pub fn excitation_signal(q: usize, steps: usize, hold: usize, lo: f64, hi: f64, seed: u64) -> Result<RealMatrix> {
    if hold == 0 {
        return Err(Error::Config("hold must be at least 1".into()));
    }
    if !(lo <= hi) {
        return Err(Error::Config(format!("excitation range [{lo}, {hi}] is empty")));
    }
    let mut rng = Stream::new(seed, streams::EXCITATION);
    let mut out = RealMatrix::zeros(q, steps);
    for block in 0..steps.div_ceil(hold) {
        let levels: Vec<f64> = (0..q).map(|_| rng.uniform(lo, hi)).collect();
        for k in block * hold..((block + 1) * hold).min(steps) {
            for (j, &l) in levels.iter().enumerate() {
                out[(j, k)] = l;
            }
        }
    }
    Ok(out)
}

/// Input level `u` such that `steady_state(u·1)` peaks at `peak`. Found by
/// bisection on `[0, u_hi]` after doubling `u_hi` until it brackets the peak.
pub fn calibrate_u_max(cfg: &PlantConfig, peak: f64) -> Result<f64> {
    if !(peak > cfg.boundary_temp) {
        return Err(Error::Config("calibration peak must exceed the boundary temperature".into()));
    }
    let plant = DiffusionPlant::new(cfg.clone())?;
    let ones = DVector::from_element(cfg.q(), 1.0);
    // The steady state is linear in u, so one solve gives the peak for any level.
    let unit_peak = plant.steady_state(&ones)?.field.max() - cfg.boundary_temp;
    let peak_at = |u: f64| cfg.boundary_temp + u * unit_peak;
    let (mut lo, mut hi) = (0.0, 1.0);
    while peak_at(hi) < peak {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if peak_at(mid) < peak {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dense system matrix `I − α·dt·L` of the interior nodes (small grids only).
pub fn dense_step_matrix(cfg: &PlantConfig) -> DMatrix<f64> {
    let ni = cfg.interior();
    let c1 = cfg.alpha * cfg.dt / (cfg.spacing * cfg.spacing);
    let e = shifted_laplacian(ni, 1.0, c1);
    DMatrix::from_fn(ni * ni, ni * ni, |a, b| if a >= b { e(a, b) } else { e(b, a) })
}
