//! Two-SVD DMDc identification of a reduced linear model
//! `x̃_{k+1} = Ã x̃_k + B̃ u_k` with `x ≈ U_r x̃ + b`.
//!
//! The optional scalar `baseline` b is subtracted from every state before
//! fitting; with `b = 0` the model is the plain linear DMDc fit.

use std::fs;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::matio::{parse_key_values, read_matrix, split_snapshots, write_matrix, RealMatrix, SnapshotDataset};
use crate::svd::{energy_profile, numerical_rank, truncated_svd, SvdFactors, TruncationRule, RANK_TOL};

pub type Complex64 = Complex<f64>;

/// `reconstruct_full` is only available for state dimensions up to this size.
pub const RECONSTRUCTION_CAP: usize = 256;

/// Largest eigenvector-matrix condition number accepted by [`DmdcModel::modes`].
pub const MODE_CONDITION_LIMIT: f64 = 1e8;

/// Default energy thresholds for the Ω and Y decompositions.
pub const DEFAULT_TAU_OMEGA: f64 = 0.998;
pub const DEFAULT_TAU_Y: f64 = 0.99;

/// Factors shared by every model identified from one dataset and one Ω order.
///
/// Holds `Z = Y V̂_s Σ̂_s⁻¹` (n×s), the split of `Û_s`, and the Y decomposition
/// truncated at the largest order of interest, so models of any smaller order
/// `r` are formed without touching the snapshots again.
#[derive(Debug, Clone)]
pub struct DmdcFactorization {
    n: usize,
    q: usize,
    m_train: usize,
    dt: f64,
    baseline: f64,
    omega: SvdFactors,
    y: SvdFactors,
    z: RealMatrix,
    y_raw: Option<RealMatrix>,
}

impl DmdcFactorization {
    /// Decomposes Ω to the order chosen by `s_rule` and Y to the order chosen
    /// by `r_rule`.
    pub fn new(
        ds: &SnapshotDataset,
        s_rule: TruncationRule,
        r_rule: TruncationRule,
        baseline: f64,
    ) -> Result<Self> {
        if !baseline.is_finite() {
            return Err(Error::InvalidData("baseline must be finite".into()));
        }
        let split = split_snapshots(ds)?;
        let (n, q) = (ds.state_dim(), ds.input_dim());
        let cols = split.x.ncols();
        let mut omega_mat = RealMatrix::zeros(n + q, cols);
        omega_mat.rows_mut(0, n).copy_from(&split.x);
        omega_mat.rows_mut(n, q).copy_from(&split.ups);
        let mut y = split.y;
        if baseline != 0.0 {
            omega_mat.rows_mut(0, n).add_scalar_mut(-baseline);
            y.add_scalar_mut(-baseline);
        }
        drop(split.x);

        let omega = truncated_svd(&omega_mat, s_rule)?;
        drop(omega_mat);
        let smax = omega.spectrum[0];
        if omega.s[omega.order - 1] < RANK_TOL * smax {
            return Err(Error::IllConditioned {
                order: omega.order,
                rank: numerical_rank(&omega.spectrum),
            });
        }
        let y_svd = truncated_svd(&y, r_rule)?;

        let mut vs = omega.v.clone();
        for (j, sv) in omega.s.iter().enumerate() {
            vs.column_mut(j).unscale_mut(*sv);
        }
        let z = &y * vs;
        let y_raw = (n <= RECONSTRUCTION_CAP).then_some(y);
        Ok(DmdcFactorization {
            n,
            q,
            m_train: ds.len(),
            dt: ds.dt(),
            baseline,
            omega,
            y: y_svd,
            z,
            y_raw,
        })
    }

    pub fn s(&self) -> usize {
        self.omega.order
    }

    pub fn max_r(&self) -> usize {
        self.y.order
    }

    pub fn omega_svd(&self) -> &SvdFactors {
        &self.omega
    }

    pub fn y_svd(&self) -> &SvdFactors {
        &self.y
    }

    /// Builds the reduced model with the leading `r` Y-singular vectors.
    pub fn model(&self, r: usize) -> Result<DmdcModel> {
        let y_svd = self.y.truncated(r)?;
        let ur = y_svd.u.clone();
        let u1 = self.omega.u.rows(0, self.n);
        let u2 = self.omega.u.rows(self.n, self.q);
        let urz = ur.tr_mul(&self.z);
        let atil = &urz * u1.tr_mul(&ur);
        let btil = &urz * u2.transpose();
        let mut model = DmdcModel::assemble(ur, atil, btil, self.dt, self.baseline)?;
        model.s = self.omega.order;
        model.m_train = self.m_train;
        model.omega_spectrum = self.omega.spectrum.clone();
        model.y_spectrum = self.y.spectrum.clone();
        model.omega_svd = Some(self.omega.clone());
        model.y_svd = Some(y_svd);
        model.y_raw = self.y_raw.clone();
        Ok(model)
    }
}

/// Identifies a model in the original coordinates (zero baseline).
pub fn identify(ds: &SnapshotDataset, s_rule: TruncationRule, r_rule: TruncationRule) -> Result<DmdcModel> {
    identify_with_baseline(ds, s_rule, r_rule, 0.0)
}

pub fn identify_with_baseline(
    ds: &SnapshotDataset,
    s_rule: TruncationRule,
    r_rule: TruncationRule,
    baseline: f64,
) -> Result<DmdcModel> {
    let f = DmdcFactorization::new(ds, s_rule, r_rule, baseline)?;
    f.model(f.max_r())
}

#[derive(Debug, Clone)]
pub struct DmdcModel {
    n: usize,
    q: usize,
    r: usize,
    s: usize,
    m_train: usize,
    dt: f64,
    baseline: f64,
    ur: RealMatrix,
    atil: RealMatrix,
    btil: RealMatrix,
    omega_spectrum: Vec<f64>,
    y_spectrum: Vec<f64>,
    omega_svd: Option<SvdFactors>,
    y_svd: Option<SvdFactors>,
    y_raw: Option<RealMatrix>,
    eigvals: Vec<Complex64>,
    eigvecs: DMatrix<Complex64>,
}

impl DmdcModel {
    /// Wraps given reduced matrices. `ur` must have orthonormal columns.
    pub fn from_reduced(ur: RealMatrix, atil: RealMatrix, btil: RealMatrix, dt: f64, baseline: f64) -> Result<Self> {
        DmdcModel::assemble(ur, atil, btil, dt, baseline)
    }

    fn assemble(ur: RealMatrix, atil: RealMatrix, btil: RealMatrix, dt: f64, baseline: f64) -> Result<Self> {
        let (n, r) = ur.shape();
        let q = btil.ncols();
        if r == 0 || n == 0 || q == 0 {
            return Err(Error::InvalidData("model dimensions must be positive".into()));
        }
        check_dim("Atil rows", r, atil.nrows())?;
        check_dim("Atil cols", r, atil.ncols())?;
        check_dim("Btil rows", r, btil.nrows())?;
        if !(dt > 0.0) || !baseline.is_finite() {
            return Err(Error::InvalidData("dt must be positive and baseline finite".into()));
        }
        let defect = (ur.tr_mul(&ur) - DMatrix::<f64>::identity(r, r)).amax();
        if defect > 1e-10 {
            return Err(Error::InvalidData(format!(
                "basis is not orthonormal (defect {defect:.3e})"
            )));
        }
        let (eigvals, eigvecs) = eigenpairs(&atil);
        Ok(DmdcModel {
            n,
            q,
            r,
            s: 0,
            m_train: 0,
            dt,
            baseline,
            ur,
            atil,
            btil,
            omega_spectrum: Vec::new(),
            y_spectrum: Vec::new(),
            omega_svd: None,
            y_svd: None,
            y_raw: None,
            eigvals,
            eigvecs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn r(&self) -> usize {
        self.r
    }
    pub fn s(&self) -> usize {
        self.s
    }
    pub fn m_train(&self) -> usize {
        self.m_train
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn baseline(&self) -> f64 {
        self.baseline
    }
    pub fn ur(&self) -> &RealMatrix {
        &self.ur
    }
    pub fn atil(&self) -> &RealMatrix {
        &self.atil
    }
    pub fn btil(&self) -> &RealMatrix {
        &self.btil
    }
    /// Full singular spectrum of Ω (empty for models built from reduced matrices).
    pub fn omega_spectrum(&self) -> &[f64] {
        &self.omega_spectrum
    }
    pub fn y_spectrum(&self) -> &[f64] {
        &self.y_spectrum
    }
    pub fn omega_svd(&self) -> Option<&SvdFactors> {
        self.omega_svd.as_ref()
    }
    pub fn y_svd(&self) -> Option<&SvdFactors> {
        self.y_svd.as_ref()
    }
    /// Eigenvalues of Ã by descending modulus, then descending real part,
    /// with the positive-imaginary member of a conjugate pair first.
    pub fn eigvals(&self) -> &[Complex64] {
        &self.eigvals
    }
    /// Unit-norm eigenvectors of Ã, column `i` paired with `eigvals()[i]`.
    pub fn eigvecs_reduced(&self) -> &DMatrix<Complex64> {
        &self.eigvecs
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigvals.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// Energy fractions `(p_s, p_r)` of the retained orders.
    pub fn captured_energy(&self) -> Result<(f64, f64)> {
        let po = energy_profile(&self.omega_spectrum)?;
        let py = energy_profile(&self.y_spectrum)?;
        Ok((po[self.s - 1], py[self.r - 1]))
    }

    pub fn reduce_state(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.n, x.len())?;
        let mut xt = self.ur.tr_mul(x);
        if self.baseline != 0.0 {
            xt -= self.ur.tr_mul(&DVector::from_element(self.n, self.baseline));
        }
        Ok(xt)
    }

    pub fn lift_state(&self, xt: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("reduced state", self.r, xt.len())?;
        Ok((&self.ur * xt).add_scalar(self.baseline))
    }

    /// One reduced step `Ã x̃ + B̃ u`.
    pub fn step_reduced(&self, xt: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("reduced state", self.r, xt.len())?;
        check_dim("input", self.q, u.len())?;
        Ok(&self.atil * xt + &self.btil * u)
    }

    /// Predicts `K` steps from `x0`; column `k` of the result is the lifted state at step `k`.
    pub fn rollout(&self, x0: &DVector<f64>, inputs: &RealMatrix) -> Result<RealMatrix> {
        check_dim("input rows", self.q, inputs.nrows())?;
        let k = inputs.ncols();
        let mut out = RealMatrix::zeros(self.n, k + 1);
        let mut xt = self.reduce_state(x0)?;
        out.set_column(0, &self.lift_state(&xt)?);
        for j in 0..k {
            xt = &self.atil * &xt + &self.btil * inputs.column(j);
            out.set_column(j + 1, &self.lift_state(&xt)?);
        }
        Ok(out)
    }

    /// Full-order estimates `Â = Y V̂ Σ̂⁻¹ Û₁ᵀ` and `B̂ = Y V̂ Σ̂⁻¹ Û₂ᵀ` from the
    /// retained snapshot matrix. Only for small state dimensions.
    pub fn reconstruct_full(&self) -> Result<(RealMatrix, RealMatrix)> {
        let cap = RECONSTRUCTION_CAP;
        if self.n > cap {
            return Err(Error::ReconstructionDisabled { n: self.n, cap });
        }
        let (Some(omega), Some(y)) = (&self.omega_svd, &self.y_raw) else {
            return Err(Error::InvalidData(
                "model carries no snapshot factors (not identified from data)".into(),
            ));
        };
        let mut vs = omega.v.clone();
        for (j, sv) in omega.s.iter().enumerate() {
            vs.column_mut(j).unscale_mut(*sv);
        }
        let z = y * vs;
        let ahat = &z * omega.u.rows(0, self.n).transpose();
        let bhat = &z * omega.u.rows(self.n, self.q).transpose();
        Ok((ahat, bhat))
    }

    /// Eigenvalues and projected DMD modes `Φ = U_r W`.
    pub fn modes(&self) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
        let sv = SVD::new(self.eigvecs.clone(), false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MODE_CONDITION_LIMIT) {
            return Err(Error::NonDiagonalizable { condition });
        }
        let ur = self.ur.map(|v| Complex64::new(v, 0.0));
        Ok((self.eigvals.clone(), ur * &self.eigvecs))
    }

    /// Writes `Ur`, `Atil`, `Btil`, `S_omega`, `S_y` and `model.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix(dir.join("Ur.dmdmat"), &self.ur)?;
        write_matrix(dir.join("Atil.dmdmat"), &self.atil)?;
        write_matrix(dir.join("Btil.dmdmat"), &self.btil)?;
        let col = |v: &[f64]| RealMatrix::from_column_slice(v.len(), 1, v);
        if !self.omega_spectrum.is_empty() {
            write_matrix(dir.join("S_omega.dmdmat"), &col(&self.omega_spectrum))?;
        }
        if !self.y_spectrum.is_empty() {
            write_matrix(dir.join("S_y.dmdmat"), &col(&self.y_spectrum))?;
        }
        let meta = format!(
            "n = {}\nq = {}\nr = {}\ns = {}\nm_train = {}\ndt = {:?}\nbaseline = {:?}\n",
            self.n, self.q, self.r, self.s, self.m_train, self.dt, self.baseline
        );
        let p = dir.join("model.txt");
        fs::write(&p, meta).map_err(|e| Error::io(p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("model.txt");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let kv = parse_key_values(&text);
        let get = |key: &str| -> Result<String> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Corrupt {
                    path: meta_path.clone(),
                    detail: format!("missing {key}"),
                })
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?.parse::<f64>().map_err(|_| Error::Corrupt {
                path: meta_path.clone(),
                detail: format!("bad value for {key}"),
            })
        };
        let ur = read_matrix(dir.join("Ur.dmdmat"))?;
        let atil = read_matrix(dir.join("Atil.dmdmat"))?;
        let btil = read_matrix(dir.join("Btil.dmdmat"))?;
        let mut model = DmdcModel::assemble(ur, atil, btil, num("dt")?, num("baseline")?)?;
        check_dim("model.txt n", num("n")? as usize, model.n)?;
        check_dim("model.txt q", num("q")? as usize, model.q)?;
        check_dim("model.txt r", num("r")? as usize, model.r)?;
        model.s = num("s")? as usize;
        model.m_train = num("m_train")? as usize;
        let spectrum = |name: &str| -> Result<Vec<f64>> {
            let p = dir.join(name);
            if p.exists() {
                Ok(read_matrix(p)?.iter().copied().collect())
            } else {
                Ok(Vec::new())
            }
        };
        model.omega_spectrum = spectrum("S_omega.dmdmat")?;
        model.y_spectrum = spectrum("S_y.dmdmat")?;
        Ok(model)
    }
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

fn eig_order(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// Eigenvalues from the real Schur form; eigenvectors as null vectors of
/// `Ã − λI` from a complex SVD, one cluster of (near-)equal eigenvalues at a time.
fn eigenpairs(atil: &RealMatrix) -> (Vec<Complex64>, DMatrix<Complex64>) {
    let r = atil.nrows();
    let mut vals: Vec<Complex64> = atil.complex_eigenvalues().iter().copied().collect();
    vals.sort_by(eig_order);
    let ac = atil.map(|v| Complex64::new(v, 0.0));
    let scale = atil.amax().max(f64::MIN_POSITIVE);
    let mut vecs = DMatrix::<Complex64>::zeros(r, r);
    let mut i = 0;
    while i < r {
        let mut j = i + 1;
        while j < r && (vals[j] - vals[i]).norm() <= 1e-8 * scale {
            j += 1;
        }
        let lambda = vals[i..j].iter().sum::<Complex64>() / (j - i) as f64;
        let mut shifted = ac.clone();
        for d in 0..r {
            shifted[(d, d)] -= lambda;
        }
        let svd = SVD::new(shifted, false, true);
        let vt = svd.v_t.expect("requested v_t");
        let mut idx: Vec<usize> = (0..r).collect();
        idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        // A defective cluster has fewer null vectors than its multiplicity; the
        // last null vector is then repeated so that W is singular.
        let null_dim = idx
            .iter()
            .take(j - i)
            .take_while(|&&k| svd.singular_values[k] <= 1e-8 * scale)
            .count()
            .max(1);
        for (col, &k) in (i..j).zip(idx.iter().take(null_dim).chain(std::iter::repeat(&idx[null_dim - 1]))) {
            let mut v: DVector<Complex64> = vt.row(k).transpose().map(|c| c.conj());
            // Fix the phase so the largest entry is real and positive.
            let (pivot, _) = v
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (p, c)| if c.norm() > acc.1 { (p, c.norm()) } else { acc });
            let phase = v[pivot] / v[pivot].norm();
            v.iter_mut().for_each(|c| *c /= phase);
            let norm = v.norm();
            vecs.set_column(col, &(v / Complex64::new(norm, 0.0)));
        }
        i = j;
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use nalgebra::SymmetricEigen;

    /// Stable random (A, B) pair with spectral radius about 0.9.
    pub(crate) fn stable_system(n: usize, q: usize, seed: u64) -> (RealMatrix, RealMatrix) {
        let mut s = Stream::new(seed, "system");
        let raw = DMatrix::from_fn(n, n, |_, _| s.normal());
        let sym = SymmetricEigen::new(&raw * raw.transpose());
        let q_basis = sym.eigenvectors;
        let diag = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.9 - 0.8 * i as f64 / n as f64));
        let a = &q_basis * diag * q_basis.transpose();
        let b = DMatrix::from_fn(n, q, |_, _| s.normal());
        (a, b)
    }

    pub(crate) fn simulate(a: &RealMatrix, b: &RealMatrix, m: usize, seed: u64) -> SnapshotDataset {
        let (n, q) = (a.nrows(), b.ncols());
        let mut s = Stream::new(seed, "inputs");
        let inputs = DMatrix::from_fn(q, m, |_, _| s.normal());
        let mut states = DMatrix::zeros(n, m);
        let mut x = DVector::from_fn(n, |_, _| s.normal());
        for k in 0..m {
            states.set_column(k, &x);
            x = a * &x + b * inputs.column(k);
        }
        SnapshotDataset::new(states, inputs, 1.0).unwrap()
    }

    #[test]
    fn exact_recovery_of_known_system() {
        let (a, b) = stable_system(8, 2, 1);
        let ds = simulate(&a, &b, 200, 2);
        let model = identify(&ds, TruncationRule::Fixed(10), TruncationRule::Fixed(8)).unwrap();
        let (ah, bh) = model.reconstruct_full().unwrap();
        assert!((&ah - &a).norm() <= 1e-6, "{}", (&ah - &a).norm());
        assert!((&bh - &b).norm() <= 1e-6);
        assert_eq!((model.n(), model.q(), model.r(), model.s()), (8, 2, 8, 10));
    }

    #[test]
    fn rank_deficient_order_is_ill_conditioned() {
        let mut states = DMatrix::zeros(4, 6);
        states[(0, 1)] = 1.0;
        let inputs = DMatrix::zeros(1, 6);
        let ds = SnapshotDataset::new(states, inputs, 1.0).unwrap();
        let err = identify(&ds, TruncationRule::Fixed(3), TruncationRule::Fixed(1)).unwrap_err();
        assert!(err.to_string().contains("ill-conditioned truncation"), "{err}");
    }

    #[test]
    fn diagonal_reduced_matrix_modes() {
        let ur = DMatrix::<f64>::identity(4, 2);
        let atil = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.5]));
        let btil = DMatrix::from_element(2, 1, 1.0);
        let model = DmdcModel::from_reduced(ur.clone(), atil, btil, 1.0, 0.0).unwrap();
        let (vals, phi) = model.modes().unwrap();
        assert!((vals[0] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((vals[1] - Complex64::new(0.2, 0.0)).norm() < 1e-14);
        assert!((phi[(1, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((phi[(0, 1)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(phi[(2, 0)].norm() < 1e-14);
    }

    #[test]
    fn conjugate_pairs_are_ordered_and_satisfy_residual() {
        let (c, s) = (0.8 * 0.6f64.cos(), 0.8 * 0.6f64.sin());
        let atil = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 0.3]);
        let model =
            DmdcModel::from_reduced(DMatrix::identity(3, 3), atil.clone(), DMatrix::identity(3, 1), 1.0, 0.0).unwrap();
        let vals = model.eigvals();
        assert!(vals[0].im > 0.0 && (vals[0] - vals[1].conj()).norm() < 1e-14);
        assert!((vals[2].re - 0.3).abs() < 1e-14);
        let ac = atil.map(|v| Complex64::new(v, 0.0));
        for (i, l) in vals.iter().enumerate() {
            let w = model.eigvecs_reduced().column(i).into_owned();
            assert!((&ac * &w - &w * *l).norm() <= 1e-8 * w.norm());
        }
    }

    #[test]
    fn defective_matrix_is_rejected_by_modes() {
        let atil = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        let model = DmdcModel::from_reduced(DMatrix::identity(2, 2), atil, DMatrix::identity(2, 1), 1.0, 0.0).unwrap();
        assert!(matches!(model.modes(), Err(Error::NonDiagonalizable { .. })));
    }

    #[test]
    fn reduce_and_lift() {
        let (a, b) = stable_system(8, 2, 4);
        let ds = simulate(&a, &b, 100, 5);
        let model = identify(&ds, TruncationRule::Fixed(10), TruncationRule::Fixed(5)).unwrap();
        let xt = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        let back = model.reduce_state(&model.lift_state(&xt).unwrap()).unwrap();
        assert!((back - &xt).amax() < 1e-12);
        let in_span = model.ur() * &xt;
        let again = model.lift_state(&model.reduce_state(&in_span).unwrap()).unwrap();
        assert!((again - &in_span).amax() < 1e-10);
        let x = DVector::from_fn(8, |i, _| (i as f64).sin());
        let orth = &x - model.ur() * model.ur().tr_mul(&x);
        let proj = model.lift_state(&model.reduce_state(&orth).unwrap()).unwrap();
        assert!(proj.amax() < 1e-10);
        assert!(model.reduce_state(&DVector::zeros(7)).is_err());
    }

    #[test]
    fn baseline_shifts_coordinates() {
        let (a, b) = stable_system(6, 2, 8);
        let ds = simulate(&a, &b, 120, 9);
        let shifted = SnapshotDataset::new(ds.states().add_scalar(20.0), ds.inputs().clone(), 1.0).unwrap();
        let plain = identify(&ds, TruncationRule::Fixed(8), TruncationRule::Fixed(6)).unwrap();
        let based = identify_with_baseline(&shifted, TruncationRule::Fixed(8), TruncationRule::Fixed(6), 20.0).unwrap();
        let x0 = ds.states().column(3).into_owned();
        let u = ds.inputs().columns(3, 10).into_owned();
        let p1 = plain.rollout(&x0, &u).unwrap();
        let p2 = based.rollout(&x0.add_scalar(20.0), &u).unwrap();
        assert!((p1.add_scalar(20.0) - p2).amax() < 1e-8);
    }

    #[test]
    fn rollout_without_inputs_is_projection() {
        let (a, b) = stable_system(8, 2, 6);
        let ds = simulate(&a, &b, 100, 7);
        let model = identify(&ds, TruncationRule::Fixed(10), TruncationRule::Fixed(4)).unwrap();
        let x0 = DVector::from_fn(8, |i, _| i as f64);
        let out = model.rollout(&x0, &DMatrix::zeros(2, 0)).unwrap();
        assert_eq!(out.ncols(), 1);
        let proj = model.ur() * model.ur().tr_mul(&x0);
        assert!((out.column(0) - proj).amax() < 1e-12);
    }

    #[test]
    fn save_and_load_roundtrip() {
        let (a, b) = stable_system(8, 2, 10);
        let ds = simulate(&a, &b, 60, 11);
        let model = identify(&ds, TruncationRule::Fixed(9), TruncationRule::Fixed(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = DmdcModel::load(dir.path()).unwrap();
        assert_eq!(back.atil(), model.atil());
        assert_eq!(back.btil(), model.btil());
        assert_eq!(back.omega_spectrum(), model.omega_spectrum());
        assert_eq!((back.s(), back.m_train()), (9, 60));
        assert!(back.reconstruct_full().is_err());
    }

    #[test]
    fn factorization_serves_every_smaller_order() {
        let (a, b) = stable_system(8, 2, 12);
        let ds = simulate(&a, &b, 80, 13);
        let f = DmdcFactorization::new(&ds, TruncationRule::Fixed(10), TruncationRule::Fixed(8), 0.0).unwrap();
        for r in 1..=8 {
            let via_cache = f.model(r).unwrap();
            let direct = identify(&ds, TruncationRule::Fixed(10), TruncationRule::Fixed(r)).unwrap();
            assert!((via_cache.atil() - direct.atil()).amax() < 1e-12);
        }
        assert!(f.model(9).is_err());
    }
}
