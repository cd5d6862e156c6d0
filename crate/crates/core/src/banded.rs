//! Cholesky factorization of symmetric positive-definite band matrices.

use crate::error::{Error, Result};

/// Lower band storage: `band[i * (bw + 1) + d]` holds entry `(i, i - d)`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    /// Factors the matrix whose lower-band entries are produced by `entry(i, j)`
    /// for `j` in `i.saturating_sub(bw)..=i`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                band[i * w + (i - j)] = entry(i, j);
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = band[i * w + (i - j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(Error::InvalidData(format!(
                            "band matrix is not positive definite (pivot {i})"
                        )));
                    }
                    band[i * w] = sum.sqrt();
                } else {
                    band[i * w + (i - j)] = sum / band[j * w];
                }
            }
        }
        Ok(BandCholesky { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n, "band solve dimension");
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut sum = x[i];
            for k in i.saturating_sub(self.bw)..i {
                sum -= self.band[i * w + (i - k)] * x[k];
            }
            x[i] = sum / self.band[i * w];
        }
        for i in (0..self.n).rev() {
            let mut sum = x[i];
            for k in i + 1..(i + w).min(self.n) {
                sum -= self.band[k * w + (k - i)] * x[k];
            }
            x[i] = sum / self.band[i * w];
        }
    }
}
