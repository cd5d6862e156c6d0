//! Independent reference computations used as test oracles.

use std::sync::Arc;

use dmdmpc_core::qpsolve::QpProblem;
use dmdmpc_core::rng::Stream;
use nalgebra::{DMatrix, DVector};

pub struct RandomQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub g: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl RandomQp {
    pub fn problem(&self) -> QpProblem {
        QpProblem::new(
            self.p.clone(),
            self.q.clone(),
            Arc::new(self.g.clone()),
            self.l.clone(),
            self.u.clone(),
        )
        .unwrap()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }
}

/// Strictly convex QP with `vars` variables and `rows` constraint rows, feasible
/// by construction (bounds bracket `G z0` for a random `z0`). Some rows are
/// one-sided and some are equalities.
pub fn random_qp(vars: usize, rows: usize, seed: u64) -> RandomQp {
    let mut s = Stream::new(seed, "random-qp");
    let m = DMatrix::from_fn(vars, vars, |_, _| s.normal());
    let p = &m * m.transpose() + DMatrix::identity(vars, vars) * 0.5;
    let q = DVector::from_fn(vars, |_, _| 3.0 * s.normal());
    let g = DMatrix::from_fn(rows, vars, |_, _| s.normal());
    let z0 = DVector::from_fn(vars, |_, _| s.normal());
    let c = &g * z0;
    let mut l = DVector::zeros(rows);
    let mut u = DVector::zeros(rows);
    for i in 0..rows {
        let kind = s.unit();
        if kind < 0.1 {
            l[i] = c[i];
            u[i] = c[i];
            continue;
        }
        l[i] = if kind < 0.3 { f64::NEG_INFINITY } else { c[i] - s.uniform(0.05, 1.0) };
        u[i] = if kind > 0.85 { f64::INFINITY } else { c[i] + s.uniform(0.05, 1.0) };
    }
    RandomQp { p, q, g, l, u }
}

/// Exhaustive active-set enumeration: every row is inactive, at its lower
/// bound or at its upper bound. Each pattern's equality-constrained KKT system
/// is solved densely; the best feasible, sign-consistent point is returned
/// together with its multipliers (`Pz + q + Gᵀy = 0`).
pub fn active_set_oracle(qp: &RandomQp) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (qp.q.len(), qp.l.len());
    let tol = 1e-9;
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    for pattern in 0..3usize.pow(m as u32) {
        let mut code = pattern;
        let mut active: Vec<(usize, f64, u8)> = Vec::new();
        let mut skip = false;
        for i in 0..m {
            let state = (code % 3) as u8;
            code /= 3;
            let eq = qp.l[i] == qp.u[i];
            match state {
                1 if qp.l[i].is_finite() => active.push((i, qp.l[i], 1)),
                2 if qp.u[i].is_finite() && !eq => active.push((i, qp.u[i], 2)),
                0 => {}
                _ => skip = true,
            }
        }
        if skip || active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        for (a, &(i, b, _)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + a, j)] = qp.g[(i, j)];
                kkt[(j, n + a)] = qp.g[(i, j)];
            }
            rhs[n + a] = b;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        let gz = &qp.g * &z;
        if (0..m).any(|i| gz[i] < qp.l[i] - tol || gz[i] > qp.u[i] + tol) {
            continue;
        }
        let mut y = DVector::zeros(m);
        let mut consistent = true;
        for (a, &(i, _, side)) in active.iter().enumerate() {
            let lam = sol[n + a];
            let eq = qp.l[i] == qp.u[i];
            if !eq && ((side == 1 && lam > tol) || (side == 2 && lam < -tol)) {
                consistent = false;
            }
            y[i] = lam;
        }
        if !consistent {
            continue;
        }
        let obj = qp.objective(&z);
        if best.as_ref().is_none_or(|b| obj < b.0 - 1e-12) {
            best = Some((obj, z, y));
        }
    }
    best.map(|(_, z, y)| (z, y))
}

/// Stable random `(A, B)` with eigenvalues spread over `[0.1, 0.9]`.
pub fn stable_system(n: usize, q: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut s = Stream::new(seed, "system");
    let raw = DMatrix::from_fn(n, n, |_, _| s.normal());
    let basis = (&raw * raw.transpose()).symmetric_eigen().eigenvectors;
    let diag = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.9 - 0.8 * i as f64 / n as f64));
    let a = &basis * diag * basis.transpose();
    let b = DMatrix::from_fn(n, q, |_, _| s.normal());
    (a, b)
}

/// `m` snapshots of `x⁺ = A x + B u` under Gaussian inputs from a random start.
pub fn simulate(a: &DMatrix<f64>, b: &DMatrix<f64>, m: usize, seed: u64) -> dmdmpc_core::SnapshotDataset {
    let (n, q) = (a.nrows(), b.ncols());
    let mut s = Stream::new(seed, "inputs");
    let inputs = DMatrix::from_fn(q, m, |_, _| s.normal());
    let mut states = DMatrix::zeros(n, m);
    let mut x = DVector::from_fn(n, |_, _| s.normal());
    for k in 0..m {
        states.set_column(k, &x);
        x = a * &x + b * inputs.column(k);
    }
    dmdmpc_core::SnapshotDataset::new(states, inputs, 1.0).unwrap()
}

/// Singular values from the eigenvalues of the smaller Gram matrix, descending.
pub fn gram_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let g = if a.nrows() <= a.ncols() { a * a.transpose() } else { a.transpose() * a };
    let mut s: Vec<f64> = g.symmetric_eigenvalues().iter().map(|&l| l.max(0.0).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Best rank-`k` Frobenius error `sqrt(Σ_{i>k} σ_i²)` from the Gram spectrum.
pub fn eckart_young_error(a: &DMatrix<f64>, k: usize) -> f64 {
    let g = if a.nrows() <= a.ncols() { a * a.transpose() } else { a.transpose() * a };
    let mut l: Vec<f64> = g.symmetric_eigenvalues().iter().map(|&v| v.max(0.0)).collect();
    l.sort_by(|x, y| y.total_cmp(x));
    l[k.min(l.len())..].iter().sum::<f64>().sqrt()
}
