use criterion::{criterion_group, criterion_main, Criterion};
use dmdmpc_core::{DiffusionPlant, PlantConfig};
use nalgebra::DVector;
use std::hint::black_box;

fn plant(c: &mut Criterion) {
    let cfg = PlantConfig::default();
    let plant = DiffusionPlant::new(cfg.clone()).unwrap();
    let u = DVector::from_element(cfg.q(), 0.5 * cfg.u_max);
    let st = plant.initial_state();
    c.bench_function("plant step 71x71", |b| b.iter(|| plant.step(black_box(&st), &u).unwrap()));
    c.bench_function("plant factor 71x71", |b| b.iter(|| DiffusionPlant::new(black_box(cfg.clone())).unwrap()));
}

criterion_group!(benches, plant);
criterion_main!(benches);
