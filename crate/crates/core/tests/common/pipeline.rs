//! Full-scale data, model and closed-loop runs shared across tests. Each piece
//! is computed once per test binary.

use std::sync::OnceLock;

use dmdmpc_core::harness::{proxy_controller, ExcitationConfig};
use dmdmpc_core::{
    generate_dataset, reference_field, run_closed_loop, DiffusionPlant, DmdcFactorization, DmdcModel, MpcConfig,
    MpcController, PlantConfig, ReferenceField, ReferenceKind, RunRecord, SnapshotDataset, TruncationRule,
};

pub const SEED: u64 = 7;
pub const M_TRAIN: usize = 3000;
pub const S_ORDER: usize = 80;
pub const R_ORDER: usize = 40;
pub const PROXY_S: usize = 72;
pub const PROXY_R: usize = 36;
pub const STEPS: usize = 30;
pub const STATE_BOX: (f64, f64) = (15.0, 35.0);

pub struct Pipeline {
    pub cfg: PlantConfig,
    pub plant: DiffusionPlant,
    pub ds: SnapshotDataset,
    pub train: SnapshotDataset,
    pub model: DmdcModel,
}

pub fn pipeline() -> &'static Pipeline {
    static CELL: OnceLock<Pipeline> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = PlantConfig::default();
        let plant = DiffusionPlant::new(cfg.clone()).unwrap();
        let ds = generate_dataset(&cfg, &ExcitationConfig::default(), SEED).unwrap();
        let train = ds.columns(0..M_TRAIN).unwrap();
        let f = DmdcFactorization::new(
            &train,
            TruncationRule::Fixed(S_ORDER),
            TruncationRule::Fixed(R_ORDER),
            cfg.boundary_temp,
        )
        .unwrap();
        let model = f.model(R_ORDER).unwrap();
        Pipeline {
            cfg,
            plant,
            ds,
            train,
            model,
        }
    })
}

pub fn mpc_config() -> MpcConfig {
    let cfg = &pipeline().cfg;
    MpcConfig::new(cfg.q(), cfg.u_max)
}

pub fn reference(kind: ReferenceKind) -> ReferenceField {
    let cfg = &pipeline().cfg;
    reference_field(kind, cfg.window_size, cfg.boundary_temp, Some(STATE_BOX)).unwrap()
}

pub struct Comparison {
    pub dmd: RunRecord,
    pub proxy: RunRecord,
}

fn compare(kind: ReferenceKind) -> Comparison {
    let p = pipeline();
    let r = reference(kind);
    let mut ctrl = MpcController::new(p.model.clone(), mpc_config(), r.realized.clone()).unwrap();
    let dmd = run_closed_loop(&p.plant, &mut ctrl, &r, STEPS, Some(STATE_BOX)).unwrap();
    let mut proxy = proxy_controller(
        &p.train,
        &p.cfg.actuator_pixels(),
        mpc_config(),
        &r.realized,
        TruncationRule::Fixed(PROXY_S),
        TruncationRule::Fixed(PROXY_R),
        p.cfg.boundary_temp,
    )
    .unwrap();
    let proxy = run_closed_loop(&p.plant, &mut proxy, &r, STEPS, Some(STATE_BOX)).unwrap();
    Comparison { dmd, proxy }
}

/// DMD-MPC and proxy runs for the three default references, in the order
/// gaussian, sliced-gaussian, constant.
pub fn comparison(index: usize) -> &'static Comparison {
    static CELLS: [OnceLock<Comparison>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let kinds = [
        ReferenceKind::default_gaussian(),
        ReferenceKind::default_sliced(),
        ReferenceKind::default_constant(),
    ];
    CELLS[index].get_or_init(|| compare(kinds[index]))
}
