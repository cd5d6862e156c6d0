mod common;

use common::oracle::{active_set_oracle, random_qp};
use dmdmpc_core::qpsolve::{kkt_residuals, solve, QpSettings, QpSolution, QpSolver, QpStatus, WarmStart};
use dmdmpc_core::rng::Stream;

/// Residual tolerances of 1e-5 leave z errors of a few 1e-5 on these
/// instances; comparisons against the exact oracle use tighter settings.
fn tight() -> QpSettings {
    QpSettings {
        eps_abs: 1e-7,
        eps_rel: 1e-7,
        ..QpSettings::default()
    }
}

fn dims(i: u64) -> (usize, usize) {
    (2 + (i % 5) as usize, 1 + (i % 8) as usize)
}

#[test]
fn matches_active_set_enumeration() {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (n, m) = dims(i);
        let qp = random_qp(n, m, 1000 + i);
        let (zs, _) = active_set_oracle(&qp).expect("feasible by construction");
        let sol = solve(&qp.problem(), &tight());
        assert_eq!(sol.status, QpStatus::Solved, "instance {i}");
        let dz = (&sol.z - &zs).amax();
        let dobj = (qp.objective(&sol.z) - qp.objective(&zs)).abs();
        worst = worst.max(dz);
        assert!(dz <= 1e-5, "instance {i}: |z - z*| = {dz:.3e}");
        assert!(dobj <= 1e-4, "instance {i}: objective gap {dobj:.3e}");
    }
    eprintln!("worst |z - z*| = {worst:.3e}");
}

#[test]
fn oracle_solutions_satisfy_kkt() {
    for i in 0..30 {
        let (n, m) = dims(i);
        let qp = random_qp(n, m, 5000 + i);
        let (z, y) = active_set_oracle(&qp).unwrap();
        let sol = QpSolution {
            z,
            y,
            status: QpStatus::Solved,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
        };
        let r = kkt_residuals(&qp.problem(), &sol);
        assert!(r.stationarity <= 1e-9 && r.primal_feasibility <= 1e-9 && r.complementarity <= 1e-9, "{r:?}");
    }
}

#[test]
fn solved_solutions_have_small_kkt_residuals() {
    for i in 0..30 {
        let (n, m) = dims(i);
        let qp = random_qp(n, m, 7000 + i);
        let prob = qp.problem();
        let sol = solve(&prob, &tight());
        assert_eq!(sol.status, QpStatus::Solved);
        let r = kkt_residuals(&prob, &sol);
        assert!(r.stationarity <= 1e-4 && r.primal_feasibility <= 1e-4 && r.complementarity <= 1e-4, "{i}: {r:?}");
    }
}

#[test]
fn warm_start_rarely_hurts() {
    let mut rng = Stream::new(9, "warm");
    let mut ok = 0;
    for i in 0..100 {
        let (n, m) = dims(i);
        let qp = random_qp(n, m, 9000 + i);
        let base = solve(&qp.problem(), &QpSettings::default());
        let mut perturbed = qp.problem();
        let dq = nalgebra::DVector::from_fn(n, |_, _| rng.normal());
        perturbed.q += dq.normalize() * (0.01 * qp.q.norm() * rng.unit());
        let cold = solve(&perturbed, &QpSettings::default());
        let mut solver = QpSolver::new(perturbed, QpSettings::default()).unwrap();
        solver.set_warm_start(Some(WarmStart { z: base.z.clone(), y: base.y.clone() }));
        let warm = solver.solve();
        if warm.iterations <= cold.iterations {
            ok += 1;
        }
    }
    assert!(ok >= 90, "warm start no worse in only {ok}/100 trials");
}
