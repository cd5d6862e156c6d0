//! Validation error against training size and model order on the full-size
//! plate. Slow: four decompositions of the 2536-row snapshot matrix.

use dmdmpc_core::harness::{factorize_capped, generate_dataset, validate, validation_starts, ExcitationConfig};
use dmdmpc_core::{PlantConfig, TruncationRule};

#[test]
fn validation_error_shrinks_with_data_and_order() {
    let cfg = PlantConfig::default();
    let ds = generate_dataset(&cfg, &ExcitationConfig::default(), 7).unwrap();
    let starts = validation_starts(3000, ds.len(), 50, 5);
    let mean_error = |f: &dmdmpc_core::DmdcFactorization, r: usize| {
        let model = f.model(r).unwrap();
        let per: Vec<f64> = starts
            .iter()
            .map(|&s| validate(&model, &ds, &[s], 50).unwrap().max_abs_error)
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    };

    let mut by_m = Vec::new();
    let mut by_r = Vec::new();
    for m in [500, 1000, 2000, 3000] {
        let train = ds.columns(0..m).unwrap();
        let f = factorize_capped(&train, TruncationRule::Fixed(80), TruncationRule::Fixed(40), 20.0).unwrap();
        by_m.push(mean_error(&f, 40) * 1e3);
        if m == 3000 {
            by_r = [10, 20, 30, 40].iter().map(|&r| mean_error(&f, r) * 1e3).collect();
        }
    }
    eprintln!("mean max-abs validation error (mK) over m: {by_m:.3?}, over r: {by_r:.3?}");
    for v in [&by_m, &by_r] {
        assert!(v.windows(2).all(|w| w[1] <= 1.1 * w[0]), "{v:?}");
    }
}
