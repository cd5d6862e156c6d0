//! Truncated singular value decomposition and the cumulative energy criterion.

use nalgebra::{DMatrix, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::matio::RealMatrix;

/// Singular values below `RANK_TOL * sigma_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Matrices whose smaller side is at most this size use a direct bidiagonal SVD.
pub const DIRECT_SVD_LIMIT: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationRule {
    /// Keep exactly this many components.
    Fixed(usize),
    /// Keep the fewest components whose cumulative energy reaches the threshold.
    Energy(f64),
}

impl TruncationRule {
    pub fn fixed(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("fixed truncation order must be at least 1".into()));
        }
        Ok(TruncationRule::Fixed(order))
    }

    pub fn energy(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!(
                "energy threshold must lie in (0, 1], got {tau}"
            )));
        }
        Ok(TruncationRule::Energy(tau))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TruncationRule::Fixed(k) => TruncationRule::fixed(k).map(|_| ()),
            TruncationRule::Energy(t) => TruncationRule::energy(t).map(|_| ()),
        }
    }

    /// Resolves the rule to an order given the full singular spectrum of a
    /// `rows x cols` matrix. Energy orders are capped at the numerical rank.
    pub fn resolve(&self, spectrum: &[f64], rows: usize, cols: usize) -> Result<usize> {
        self.validate()?;
        let bound = rows.min(cols);
        match *self {
            TruncationRule::Fixed(k) if k > bound => Err(Error::OrderExceedsRank {
                requested: k,
                bound,
            }),
            TruncationRule::Fixed(k) => Ok(k),
            TruncationRule::Energy(tau) => {
                let p = energy_profile(spectrum)?;
                let order = p.iter().position(|&pv| pv >= tau).map_or(p.len(), |i| i + 1);
                Ok(order.min(numerical_rank(spectrum)).max(1))
            }
        }
    }
}

impl std::fmt::Display for TruncationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruncationRule::Fixed(k) => write!(f, "fixed:{k}"),
            TruncationRule::Energy(t) => write!(f, "energy:{t}"),
        }
    }
}

impl std::str::FromStr for TruncationRule {
    type Err = Error;

    /// Accepts `fixed:K`, `energy:TAU`, or a bare integer (fixed order).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse truncation rule {s:?}"));
        if let Some(k) = s.strip_prefix("fixed:") {
            TruncationRule::fixed(k.trim().parse().map_err(|_| bad())?)
        } else if let Some(t) = s.strip_prefix("energy:") {
            TruncationRule::energy(t.trim().parse().map_err(|_| bad())?)
        } else {
            TruncationRule::fixed(s.parse().map_err(|_| bad())?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvdMethod {
    /// Direct SVD for small matrices, Gram eigendecomposition otherwise.
    #[default]
    Auto,
    Direct,
    /// Eigendecomposition of the Gram matrix on the smaller side.
    Gram,
}

/// Truncated economy SVD `mat ≈ u * diag(s) * vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: RealMatrix,
    pub s: Vec<f64>,
    pub v: RealMatrix,
    pub order: usize,
    /// All `min(rows, cols)` singular values, descending. Needed for energy fractions.
    pub spectrum: Vec<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> RealMatrix {
        let mut us = self.u.clone();
        for (j, sv) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*sv);
        }
        us * self.v.transpose()
    }

    /// Cumulative energy of the retained components.
    pub fn captured_energy(&self) -> Result<f64> {
        Ok(energy_profile(&self.spectrum)?[self.order - 1])
    }

    /// Keeps only the leading `order` components.
    pub fn truncated(&self, order: usize) -> Result<SvdFactors> {
        if order == 0 || order > self.order {
            return Err(Error::OrderExceedsRank {
                requested: order,
                bound: self.order,
            });
        }
        Ok(SvdFactors {
            u: self.u.columns(0, order).into_owned(),
            s: self.s[..order].to_vec(),
            v: self.v.columns(0, order).into_owned(),
            order,
            spectrum: self.spectrum.clone(),
        })
    }
}

/// Cumulative energy fractions `p_v = sum_{i<=v} s_i^2 / sum_i s_i^2` over the
/// values sorted in descending order. The last entry is exactly 1.
pub fn energy_profile(s: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = s.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidData(format!(
            "singular values must be finite and nonnegative, got {bad}"
        )));
    }
    let mut sorted = s.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut partial = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    for v in &sorted {
        acc += v * v;
        partial.push(acc);
    }
    let total = match partial.last() {
        Some(&t) if t > 0.0 => t,
        _ => return Err(Error::ZeroEnergy),
    };
    Ok(partial.into_iter().map(|p| p / total).collect())
}

pub fn numerical_rank(spectrum: &[f64]) -> usize {
    let smax = spectrum.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    spectrum.iter().filter(|&&v| v > RANK_TOL * smax).count()
}

pub fn truncated_svd(mat: &RealMatrix, rule: TruncationRule) -> Result<SvdFactors> {
    truncated_svd_with(mat, rule, SvdMethod::Auto)
}

pub fn truncated_svd_with(
    mat: &RealMatrix,
    rule: TruncationRule,
    method: SvdMethod,
) -> Result<SvdFactors> {
    if mat.is_empty() {
        return Err(Error::InvalidData("cannot decompose an empty matrix".into()));
    }
    rule.validate()?;
    if let TruncationRule::Fixed(k) = rule {
        let bound = mat.nrows().min(mat.ncols());
        if k > bound {
            return Err(Error::OrderExceedsRank { requested: k, bound });
        }
    }
    let small = mat.nrows().min(mat.ncols());
    let direct = match method {
        SvdMethod::Direct => true,
        SvdMethod::Gram => false,
        SvdMethod::Auto => small <= DIRECT_SVD_LIMIT,
    };
    let full = if direct { direct_svd(mat) } else { gram_svd(mat, |spectrum| rule.resolve(spectrum, mat.nrows(), mat.ncols())) }?;
    let order = rule.resolve(&full.spectrum, mat.nrows(), mat.ncols())?;
    full.truncated(order)
}

/// Full economy SVD by Golub–Kahan bidiagonalization.
fn direct_svd(mat: &RealMatrix) -> Result<SvdFactors> {
    let svd = SVD::new(mat.clone(), true, true);
    let u = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let u = u.select_columns(&idx);
    let v = vt.select_rows(&idx).transpose();
    Ok(SvdFactors {
        order: s.len(),
        spectrum: s.clone(),
        u,
        s,
        v,
    })
}

/// SVD through the symmetric eigendecomposition of `BᵀB`, where `B` is `mat`
/// or its transpose, whichever has fewer columns. The leading eigenvectors `V`
/// are refined by a QR of `B·V` followed by a small dense SVD of the triangular
/// factor, so no division by small singular values occurs.
fn gram_svd(
    mat: &RealMatrix,
    order: impl Fn(&[f64]) -> Result<usize>,
) -> Result<SvdFactors> {
    let tall = mat.ncols() <= mat.nrows();
    let gram = if tall {
        mat.tr_mul(mat)
    } else {
        mat * mat.transpose()
    };
    let dim = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut spectrum: Vec<f64> = idx
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    // Squaring loses half the digits: values under this floor are noise.
    let floor = (dim as f64 * f64::EPSILON).sqrt() * spectrum[0];
    for v in spectrum.iter_mut() {
        if *v <= floor {
            *v = 0.0;
        }
    }
    let k = order(&spectrum)?;
    let basis = eig.eigenvectors.select_columns(&idx[..k]);
    let projected = if tall { mat * &basis } else { mat.tr_mul(&basis) };
    let qr = projected.qr();
    let q = qr.q();
    let small = direct_svd(&qr.r())?;
    for (dst, src) in spectrum.iter_mut().zip(&small.s) {
        *dst = *src;
    }
    // projected = q·r = (q·P)·Σ·Wᵀ, so B ≈ (q·P)·Σ·(V·W)ᵀ.
    let left = q * small.u;
    let right = basis * small.v;
    let (u, v) = if tall { (left, right) } else { (right, left) };
    Ok(SvdFactors {
        u,
        s: small.s,
        v,
        order: k,
        spectrum,
    })
}

/// `‖UᵀU − I‖_max`.
pub fn orthonormality_defect(u: &RealMatrix) -> f64 {
    let g = u.tr_mul(u);
    let k = g.nrows();
    (g - DMatrix::<f64>::identity(k, k)).amax()
}
