//! Run configuration: a TOML document with one table per pipeline stage.
//! Every key is optional; omitted keys take the defaults below.

use std::path::{Path, PathBuf};

use dmdmpc_core::harness::{ExcitationConfig, ReferenceKind};
use dmdmpc_core::mpc::{MpcConfig, TrackingForm};
use dmdmpc_core::plant::{lattice, PlantConfig, DEFAULT_U_MAX};
use dmdmpc_core::qpsolve::QpSettings;
use dmdmpc_core::rng::fnv1a64;
use dmdmpc_core::TruncationRule;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub plant: PlantSection,
    pub excitation: ExcitationSection,
    pub identification: IdentificationSection,
    pub mpc: MpcSection,
    pub reference: ReferenceSection,
    pub proxy: ProxySection,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("runs"),
            plant: PlantSection::default(),
            excitation: ExcitationSection::default(),
            identification: IdentificationSection::default(),
            mpc: MpcSection::default(),
            reference: ReferenceSection::default(),
            proxy: ProxySection::default(),
            ablation: AblationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub grid: usize,
    pub spacing: f64,
    pub alpha: f64,
    pub dt: f64,
    pub boundary_temp: f64,
    pub window_offset: usize,
    pub window_size: usize,
    /// Sources per axis on the lattice over the observation window.
    pub actuators_per_axis: usize,
    pub footprint_radius: f64,
    pub u_max: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection {
            grid: 71,
            spacing: 1.0,
            alpha: 20.0,
            dt: 1.0,
            boundary_temp: 20.0,
            window_offset: 11,
            window_size: 50,
            actuators_per_axis: 6,
            footprint_radius: 6.0,
            u_max: DEFAULT_U_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationSection {
    pub steps: usize,
    pub hold: usize,
    pub lo: f64,
    /// Defaults to the plant's `u_max`.
    pub hi: Option<f64>,
}

impl Default for ExcitationSection {
    fn default() -> Self {
        ExcitationSection {
            steps: 5000,
            hold: 50,
            lo: 0.0,
            hi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationSection {
    /// Leading snapshots used for training; the rest validate.
    pub train: usize,
    /// `fixed:K`, `energy:T` or a bare order.
    pub s: String,
    pub r: String,
    /// Energy thresholds reported by `identify` next to the chosen orders.
    pub tau_omega: f64,
    pub tau_y: f64,
    /// Defaults to the plant boundary temperature.
    pub baseline: Option<f64>,
    pub validation_horizon: usize,
    pub validation_segments: usize,
    pub validation_tolerance: f64,
}

impl Default for IdentificationSection {
    fn default() -> Self {
        IdentificationSection {
            train: 3000,
            s: "fixed:80".into(),
            r: "fixed:40".into(),
            tau_omega: dmdmpc_core::dmdc::DEFAULT_TAU_OMEGA,
            tau_y: dmdmpc_core::dmdc::DEFAULT_TAU_Y,
            baseline: None,
            validation_horizon: 50,
            validation_segments: 5,
            validation_tolerance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub q_weight: f64,
    pub r_weight: f64,
    pub state_penalty: f64,
    /// Set both to enable the state box.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub u_min: f64,
    /// Defaults to the plant's `u_max`.
    pub u_max: Option<f64>,
    pub constraint_stride: usize,
    /// `reduced` or `lifted`.
    pub tracking: String,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub steps: usize,
}

impl Default for MpcSection {
    fn default() -> Self {
        MpcSection {
            horizon: 10,
            q_weight: 1.0,
            r_weight: 1e-3,
            state_penalty: 1e3,
            x_min: Some(15.0),
            x_max: Some(35.0),
            u_min: 0.0,
            u_max: None,
            constraint_stride: 1,
            tracking: "reduced".into(),
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            max_iter: 4000,
            steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// Reference used by `control` and `ablate`.
    pub kind: String,
    pub amplitude: f64,
    /// Window pixel (row, column); defaults to the window center.
    pub center: Option<[f64; 2]>,
    pub sigma: f64,
    pub level: f64,
    pub slice: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection {
            kind: "gaussian".into(),
            amplitude: 8.0,
            center: None,
            sigma: 16.0,
            level: 28.0,
            slice: 26.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySection {
    pub s: String,
    pub r: String,
}

impl Default for ProxySection {
    fn default() -> Self {
        ProxySection {
            s: "fixed:72".into(),
            r: "fixed:36".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub sizes: Vec<usize>,
    pub orders: Vec<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            sizes: vec![500, 1000, 2000, 3000],
            orders: vec![10, 20, 30, 40],
        }
    }
}

/// A config problem, with the 1-based line of the offending key when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Line of `key` inside `[section]` (top level when `section` is empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        cfg.check().map_err(|(section, key, message)| ConfigError {
            line: locate(text, section, key),
            message: format!("{}{key}: {message}", if section.is_empty() { String::new() } else { format!("{section}.") }),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        RunConfig::parse(&text).map_err(|e| ConfigError {
            message: format!("{}: {}", path.display(), e.message),
            ..e
        })
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// FNV-1a of the canonical TOML, ignoring the output directory.
    pub fn hash(&self) -> String {
        let key = RunConfig { out: PathBuf::new(), ..self.clone() };
        format!("{:016x}", fnv1a64(key.to_toml().as_bytes()))
    }

    /// Semantic checks, reported as `(section, key, message)`.
    pub fn check(&self) -> Result<(), (&'static str, &'static str, String)> {
        let plant = self.plant_config();
        plant.validate().map_err(|e| ("plant", plant_key(&e.to_string()), e.to_string()))?;
        let e = &self.excitation;
        if e.steps < 2 {
            return Err(("excitation", "steps", format!("need at least 2 steps, got {}", e.steps)));
        }
        if e.hold == 0 {
            return Err(("excitation", "hold", "must be at least 1".into()));
        }
        if !(e.lo <= self.excitation_hi()) {
            return Err(("excitation", "lo", "lo exceeds hi".into()));
        }
        let id = &self.identification;
        if id.train < 2 || id.train > e.steps {
            return Err(("identification", "train", format!("must lie in [2, {}], got {}", e.steps, id.train)));
        }
        for (key, text) in [("s", &id.s), ("r", &id.r)] {
            rule(text).map_err(|m| ("identification", key, m))?;
        }
        for (key, t) in [("tau_omega", id.tau_omega), ("tau_y", id.tau_y)] {
            TruncationRule::energy(t).map_err(|e| ("identification", key, e.to_string()))?;
        }
        if id.validation_horizon == 0 {
            return Err(("identification", "validation_horizon", "must be at least 1".into()));
        }
        if id.validation_segments == 0 {
            return Err(("identification", "validation_segments", "must be at least 1".into()));
        }
        if self.mpc.x_min.is_some() != self.mpc.x_max.is_some() {
            return Err(("mpc", "x_min", "x_min and x_max must be given together".into()));
        }
        tracking(&self.mpc.tracking).map_err(|m| ("mpc", "tracking", m))?;
        if self.mpc.steps == 0 {
            return Err(("mpc", "steps", "must be at least 1".into()));
        }
        self.mpc_config().validate().map_err(|e| ("mpc", mpc_key(&e.to_string()), e.to_string()))?;
        self.reference_kind(&self.reference.kind).map_err(|m| ("reference", "kind", m))?;
        if !(self.reference.sigma > 0.0) {
            return Err(("reference", "sigma", "must be positive".into()));
        }
        for (key, text) in [("s", &self.proxy.s), ("r", &self.proxy.r)] {
            rule(text).map_err(|m| ("proxy", key, m))?;
        }
        let a = &self.ablation;
        if a.sizes.is_empty() || a.sizes.iter().any(|&m| m < 2 || m > e.steps) {
            return Err(("ablation", "sizes", format!("sizes must lie in [2, {}]", e.steps)));
        }
        if a.orders.is_empty() || a.orders.contains(&0) {
            return Err(("ablation", "orders", "orders must be positive".into()));
        }
        Ok(())
    }

    pub fn plant_config(&self) -> PlantConfig {
        let p = &self.plant;
        PlantConfig {
            grid: p.grid,
            spacing: p.spacing,
            alpha: p.alpha,
            dt: p.dt,
            boundary_temp: p.boundary_temp,
            window_offset: p.window_offset,
            window_size: p.window_size,
            actuators: lattice(p.window_offset, p.window_size, p.actuators_per_axis),
            footprint_radius: p.footprint_radius,
            u_max: p.u_max,
        }
    }

    fn excitation_hi(&self) -> f64 {
        self.excitation.hi.unwrap_or(self.plant.u_max)
    }

    pub fn excitation_config(&self) -> ExcitationConfig {
        ExcitationConfig {
            steps: self.excitation.steps,
            hold: self.excitation.hold,
            lo: self.excitation.lo,
            hi: self.excitation_hi(),
        }
    }

    pub fn baseline(&self) -> f64 {
        self.identification.baseline.unwrap_or(self.plant.boundary_temp)
    }

    pub fn s_rule(&self) -> TruncationRule {
        rule(&self.identification.s).expect("checked")
    }

    pub fn r_rule(&self) -> TruncationRule {
        rule(&self.identification.r).expect("checked")
    }

    pub fn proxy_rules(&self) -> (TruncationRule, TruncationRule) {
        (rule(&self.proxy.s).expect("checked"), rule(&self.proxy.r).expect("checked"))
    }

    pub fn state_box(&self) -> Option<(f64, f64)> {
        self.mpc.x_min.zip(self.mpc.x_max)
    }

    pub fn mpc_config(&self) -> MpcConfig {
        let m = &self.mpc;
        let q = self.plant.actuators_per_axis.pow(2);
        MpcConfig {
            horizon: m.horizon,
            u_min: DVector::from_element(q, m.u_min),
            u_max: DVector::from_element(q, m.u_max.unwrap_or(self.plant.u_max)),
            state_box: self.state_box(),
            q_weight: m.q_weight,
            r_weight: m.r_weight,
            state_penalty: m.state_penalty,
            constraint_stride: m.constraint_stride,
            tracking: tracking(&m.tracking).unwrap_or_default(),
            qp: QpSettings {
                eps_abs: m.eps_abs,
                eps_rel: m.eps_rel,
                max_iter: m.max_iter,
                ..QpSettings::default()
            },
        }
    }

    /// The named reference with this config's parameters.
    pub fn reference_kind(&self, name: &str) -> Result<ReferenceKind, String> {
        let r = &self.reference;
        let c = r.center.unwrap_or_else(|| {
            let mid = (self.plant.window_size as f64 - 1.0) / 2.0;
            [mid, mid]
        });
        match name {
            "gaussian" => Ok(ReferenceKind::Gaussian {
                amplitude: r.amplitude,
                center: (c[0], c[1]),
                sigma: r.sigma,
            }),
            "constant" => Ok(ReferenceKind::Constant { level: r.level }),
            "sliced-gaussian" => Ok(ReferenceKind::SlicedGaussian {
                amplitude: r.amplitude,
                center: (c[0], c[1]),
                sigma: r.sigma,
                slice: r.slice,
            }),
            other => Err(format!(
                "unknown reference `{other}` (expected one of {})",
                ReferenceKind::NAMES.join(", ")
            )),
        }
    }
}

fn rule(text: &str) -> Result<TruncationRule, String> {
    let r: TruncationRule = text.parse().map_err(|e: dmdmpc_core::Error| e.to_string())?;
    r.validate().map_err(|e| e.to_string())?;
    Ok(r)
}

fn tracking(text: &str) -> Result<TrackingForm, String> {
    match text {
        "reduced" => Ok(TrackingForm::Reduced),
        "lifted" => Ok(TrackingForm::Lifted),
        other => Err(format!("unknown tracking form `{other}` (expected reduced or lifted)")),
    }
}

/// Best-effort mapping from a plant validation message to its key.
fn plant_key(msg: &str) -> &'static str {
    const KEYS: [&str; 9] = [
        "grid",
        "spacing",
        "alpha",
        "dt",
        "window_offset",
        "window_size",
        "footprint_radius",
        "u_max",
        "boundary_temp",
    ];
    KEYS.into_iter().find(|k| msg.contains(k)).unwrap_or(if msg.contains("actuator") { "actuators_per_axis" } else { "grid" })
}

fn mpc_key(msg: &str) -> &'static str {
    const KEYS: [&str; 9] = [
        "horizon",
        "q_weight",
        "r_weight",
        "state_penalty",
        "constraint_stride",
        "eps_abs",
        "eps_rel",
        "max_iter",
        "u_min",
    ];
    KEYS.into_iter().find(|k| msg.contains(k)).unwrap_or(if msg.contains("state box") { "x_min" } else { "horizon" })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn shipped_default_config_matches_builtin() {
        let text = include_str!("../../../configs/default.cfg");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let e = RunConfig::parse("seed = 1\n[plant]\ngrid = = 3\n").unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::parse("[mpc]\nhorizon = 5\nhorizn = 4\n").unwrap_err();
        assert_eq!(e.line, Some(3), "{e}");
    }

    #[test]
    fn semantic_errors_carry_lines() {
        let e = RunConfig::parse("seed = 3\n\n[mpc]\nq_weight = 1.0\nhorizon = 0\n").unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
        let e = RunConfig::parse("[identification]\ns = \"energy:1.5\"\n").unwrap_err();
        assert_eq!(e.line, Some(2), "{e}");
        let e = RunConfig::parse("[reference]\nkind = \"ring\"\n").unwrap_err();
        assert_eq!(e.line, Some(2), "{e}");
    }
}
