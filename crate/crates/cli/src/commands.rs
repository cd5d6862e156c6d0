//! Subcommand implementations. Every stage reuses the dataset and model found
//! under the output directory when their configuration key matches, and
//! regenerates them otherwise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dmdmpc_core::harness::{
    ablation, model_id, proxy_controller, validate as validate_model, validation_starts, AblationSpec, RunMetadata,
};
use dmdmpc_core::matio::write_matrix;
use dmdmpc_core::rng::fnv1a64;
use dmdmpc_core::svd::energy_profile;
use dmdmpc_core::{
    generate_dataset, reference_field, run_closed_loop, DiffusionPlant, DmdcFactorization, DmdcModel, Error,
    MpcController, ReferenceField, ReferenceKind, RunRecord, SnapshotDataset, TruncationRule,
};

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, configuration or input files (exit 1).
    Usage(String),
    /// Numerical failure or failed check (exit 2).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::NotAMatrixFile(_) | Error::Corrupt { .. } | Error::Config(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Context {
    pub cfg: RunConfig,
    quiet: bool,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl Context {
    pub fn new(cfg: RunConfig, quiet: bool) -> Self {
        Context { cfg, quiet }
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    /// Writes `<out>/<command>.manifest.toml` with the resolved configuration.
    pub fn write_manifest(&self, command: &str) -> Result<()> {
        let text = format!(
            "command = \"{command}\"\nversion = \"{}\"\nconfig_hash = \"{}\"\n\n{}",
            env!("CARGO_PKG_VERSION"),
            self.cfg.hash(),
            self.cfg.to_toml()
        );
        write(&self.out(&format!("{command}.manifest.toml")), &text)
    }

    fn dataset_key(&self) -> String {
        let c = &self.cfg;
        let text = format!(
            "seed = {}\n{}{}",
            c.seed,
            toml::to_string(&c.plant).expect("serializable"),
            toml::to_string(&c.excitation).expect("serializable")
        );
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    fn model_key(&self) -> String {
        let text = format!(
            "{}\n{}",
            self.dataset_key(),
            toml::to_string(&self.cfg.identification).expect("serializable")
        );
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    fn cached(dir: &Path, key: &str) -> bool {
        fs::read_to_string(dir.join("key.txt")).is_ok_and(|k| k.trim() == key)
    }

    fn dataset(&self) -> Result<SnapshotDataset> {
        let dir = self.out("dataset");
        let key = self.dataset_key();
        if Self::cached(&dir, &key) {
            return Ok(SnapshotDataset::load(&dir)?);
        }
        let c = &self.cfg;
        self.say(format!(
            "simulating {} steps (hold {}, seed {})",
            c.excitation.steps, c.excitation.hold, c.seed
        ));
        let ds = generate_dataset(&c.plant_config(), &c.excitation_config(), c.seed)?;
        ds.save(&dir)?;
        write(&dir.join("key.txt"), &format!("{key}\n"))?;
        Ok(ds)
    }

    fn train(&self, ds: &SnapshotDataset) -> Result<SnapshotDataset> {
        Ok(ds.columns(0..self.cfg.identification.train)?)
    }

    fn model(&self, ds: &SnapshotDataset) -> Result<DmdcModel> {
        let dir = self.out("model");
        let key = self.model_key();
        if Self::cached(&dir, &key) {
            return Ok(DmdcModel::load(&dir)?);
        }
        let c = &self.cfg;
        self.say(format!(
            "identifying on {} snapshots (s rule {}, r rule {})",
            c.identification.train,
            c.s_rule(),
            c.r_rule()
        ));
        let f = DmdcFactorization::new(&self.train(ds)?, c.s_rule(), c.r_rule(), c.baseline())?;
        let model = f.model(f.max_r())?;
        model.save(&dir)?;
        write(&dir.join("key.txt"), &format!("{key}\n"))?;
        Ok(model)
    }

    fn plant(&self) -> Result<DiffusionPlant> {
        Ok(DiffusionPlant::new(self.cfg.plant_config())?)
    }

    fn reference(&self, name: &str) -> Result<ReferenceField> {
        let kind = self.cfg.reference_kind(name).map_err(CliError::Usage)?;
        let p = &self.cfg.plant;
        Ok(reference_field(kind, p.window_size, p.boundary_temp, self.cfg.state_box())?)
    }

    fn metadata(&self, rec: &mut RunRecord, model: &DmdcModel) {
        rec.metadata = RunMetadata {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            model_id: model_id(model),
            ..rec.metadata.clone()
        };
    }

    fn dmd_run(&self, model: &DmdcModel, r: &ReferenceField) -> Result<RunRecord> {
        let mut ctrl = MpcController::new(model.clone(), self.cfg.mpc_config(), r.realized.clone())?;
        let mut rec = run_closed_loop(&self.plant()?, &mut ctrl, r, self.cfg.mpc.steps, self.cfg.state_box())?;
        self.metadata(&mut rec, model);
        Ok(rec)
    }

    fn proxy_run(&self, ds: &SnapshotDataset, r: &ReferenceField) -> Result<RunRecord> {
        let plant_cfg = self.cfg.plant_config();
        let (s, rr) = self.cfg.proxy_rules();
        let mut proxy = proxy_controller(
            &self.train(ds)?,
            &plant_cfg.actuator_pixels(),
            self.cfg.mpc_config(),
            &r.realized,
            s,
            rr,
            self.cfg.baseline(),
        )?;
        let mut rec = run_closed_loop(&self.plant()?, &mut proxy, r, self.cfg.mpc.steps, self.cfg.state_box())?;
        let model = proxy.controller().model().clone();
        self.metadata(&mut rec, &model);
        Ok(rec)
    }

    fn summarize(&self, label: &str, rec: &RunRecord) {
        self.say(format!(
            "{label}: |e| {:.4} -> {:.4} over {} steps, {} box violations, {} solver warnings",
            rec.initial_error(),
            rec.final_error(),
            rec.steps(),
            rec.total_violations(),
            rec.solver_warnings
        ));
    }
}

pub fn excite(ctx: &Context) -> Result<()> {
    let ds = ctx.dataset()?;
    ctx.say(format!(
        "dataset: n = {}, q = {}, m = {} -> {}",
        ds.state_dim(),
        ds.input_dim(),
        ds.len(),
        ctx.out("dataset").display()
    ));
    Ok(())
}

pub fn identify(ctx: &Context) -> Result<()> {
    let ds = ctx.dataset()?;
    let model = ctx.model(&ds)?;
    let (so, sy) = (model.omega_spectrum(), model.y_spectrum());
    let (po, py) = (energy_profile(so)?, energy_profile(sy)?);
    let id = &ctx.cfg.identification;
    let cols = model.m_train() - 1;
    let s_energy = TruncationRule::Energy(id.tau_omega).resolve(so, model.n() + model.q(), cols)?;
    let r_energy = TruncationRule::Energy(id.tau_y).resolve(sy, model.n(), cols)?;

    let mut csv = String::from("order,p_omega,p_y\n");
    for k in 0..po.len().max(py.len()) {
        let cell = |p: &[f64]| p.get(k).map_or(String::new(), |v| format!("{v:.16e}"));
        let _ = writeln!(csv, "{},{},{}", k + 1, cell(&po), cell(&py));
    }
    write(&ctx.out("identify/energy.csv"), &csv)?;

    ctx.say("order  p_omega   p_y");
    for k in [1, 2, 5, 10, 20, 30, 40, 50, 60, 80, 100] {
        if k <= po.len() || k <= py.len() {
            let cell = |p: &[f64]| p.get(k - 1).map_or("-".to_string(), |v| format!("{v:.6}"));
            ctx.say(format!("{k:>5}  {}  {}", cell(&po), cell(&py)));
        }
    }
    ctx.say(format!(
        "energy rule: s = {s_energy} (p_s = {:.6}, tau {}), r = {r_energy} (p_r = {:.6}, tau {})",
        po[s_energy - 1],
        id.tau_omega,
        py[r_energy - 1],
        id.tau_y
    ));
    let (ps, pr) = model.captured_energy()?;
    ctx.say(format!(
        "model: s = {}, r = {} (p_s = {ps:.6}, p_r = {pr:.6}), spectral radius {:.6} -> {}",
        model.s(),
        model.r(),
        model.spectral_radius(),
        ctx.out("model").display()
    ));
    Ok(())
}

pub fn validate(ctx: &Context) -> Result<()> {
    let ds = ctx.dataset()?;
    let model = ctx.model(&ds)?;
    let id = &ctx.cfg.identification;
    let h = id.validation_horizon;
    let starts = validation_starts(id.train, ds.len(), h, id.validation_segments);
    if starts.is_empty() {
        return Err(CliError::Usage(format!(
            "no {h}-step validation segment fits after {} training snapshots",
            id.train
        )));
    }
    let mut csv = String::from("start,max_abs_error,relative_error\n");
    for &s in &starts {
        let r = validate_model(&model, &ds, &[s], h)?;
        let _ = writeln!(csv, "{s},{:.16e},{:.16e}", r.max_abs_error, r.relative_error);
    }
    let dir = ctx.out("validate");
    write(&dir.join("segments.csv"), &csv)?;
    let s0 = starts[0];
    let truth = ds.states().columns(s0, h + 1).into_owned();
    let inputs = ds.inputs().columns(s0, h).into_owned();
    let pred = model.rollout(&truth.column(0).into_owned(), &inputs)?;
    write_matrix(dir.join("states.dmdmat"), &truth)?;
    write_matrix(dir.join("predicted.dmdmat"), &pred)?;
    write_matrix(dir.join("inputs.dmdmat"), &inputs)?;

    let report = validate_model(&model, &ds, &starts, h)?;
    ctx.say(format!(
        "validation over {} segments of {h} steps: max-abs error {:.3e}, relative error {:.3e}",
        report.segments, report.max_abs_error, report.relative_error
    ));
    if !(report.max_abs_error <= id.validation_tolerance) {
        return Err(CliError::Numerical(format!(
            "validation max-abs error {:.3e} exceeds tolerance {:.1e}",
            report.max_abs_error, id.validation_tolerance
        )));
    }
    Ok(())
}

pub fn control(ctx: &Context, reference: Option<&str>) -> Result<()> {
    let name = reference.unwrap_or(&ctx.cfg.reference.kind).to_string();
    let r = ctx.reference(&name)?;
    let ds = ctx.dataset()?;
    let model = ctx.model(&ds)?;
    let rec = ctx.dmd_run(&model, &r)?;
    let dir = ctx.out(&format!("control/{name}"));
    rec.save(&dir)?;
    ctx.summarize(&name, &rec);
    ctx.say(format!("run -> {}", dir.display()));
    Ok(())
}

pub fn compare(ctx: &Context) -> Result<()> {
    let ds = ctx.dataset()?;
    let model = ctx.model(&ds)?;
    let mut csv = String::from("reference,dmd_final_error,proxy_final_error\n");
    for name in ReferenceKind::NAMES {
        let r = ctx.reference(name)?;
        let dmd = ctx.dmd_run(&model, &r)?;
        let proxy = ctx.proxy_run(&ds, &r)?;
        dmd.save(ctx.out(&format!("compare/{name}/dmd")))?;
        proxy.save(ctx.out(&format!("compare/{name}/proxy")))?;
        ctx.summarize(&format!("{name} dmd-mpc"), &dmd);
        ctx.summarize(&format!("{name} proxy-mpc"), &proxy);
        let _ = writeln!(csv, "{name},{:.16e},{:.16e}", dmd.final_error(), proxy.final_error());
    }
    write(&ctx.out("compare/compare.csv"), &csv)?;
    Ok(())
}

pub fn ablate(ctx: &Context) -> Result<()> {
    let c = &ctx.cfg;
    let ds = ctx.dataset()?;
    let r = ctx.reference(&c.reference.kind)?;
    let mpc = c.mpc_config();
    let spec = AblationSpec {
        sizes: &c.ablation.sizes,
        orders: &c.ablation.orders,
        s_rule: c.s_rule(),
        baseline: c.baseline(),
        mpc: &mpc,
        steps: c.mpc.steps,
    };
    let table = ablation(&ds, &ctx.plant()?, &r, &spec)?;
    let mut traj = String::from("m,r,step,l2_error\n");
    for cell in &table.cells {
        ctx.say(format!("m = {:>5}, r = {:>3}: final |e| {:.4}", cell.m, cell.r, cell.final_error()));
        for (k, e) in cell.errors.iter().enumerate() {
            let _ = writeln!(traj, "{},{},{k},{e:.16e}", cell.m, cell.r);
        }
    }
    write(&ctx.out("ablation/ablation.csv"), &table.to_csv())?;
    write(&ctx.out("ablation/trajectories.csv"), &traj)?;
    Ok(())
}
