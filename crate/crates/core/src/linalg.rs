//! Banded Cholesky factorization for symmetric positive definite systems.

use crate::error::{Error, Result};

/// `A = L Lᵀ` with `L` lower triangular of half-bandwidth `p`.
#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    n: usize,
    p: usize,
    /// Row `i` holds `L[i][i-p..=i]`.
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix whose entries are `entry(i, j)` for `j ≤ i`, `i − j ≤ p`.
    pub(crate) fn factor(n: usize, p: usize, entry: impl Fn(usize, usize) -> f64) -> Result<BandedCholesky> {
        let w = p + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(p);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(p));
                let mut s = entry(i, j);
                let (ri, rj) = (i * w + p - i, j * w + p - j);
                for k in klo..j {
                    s -= band[ri + k] * band[rj + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Solver(format!("banded matrix not positive definite at row {i}")));
                    }
                    band[ri + i] = s.sqrt();
                } else {
                    band[ri + j] = s / band[rj + j];
                }
            }
        }
        Ok(BandedCholesky { n, p, band })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let ri = i * w + p - i;
            let mut s = y[i];
            for k in i.saturating_sub(p)..i {
                s -= self.band[ri + k] * y[k];
            }
            y[i] = s / self.band[ri + i];
        }
        for i in (0..n).rev() {
            y[i] /= self.band[i * w + p];
            let ri = i * w + p - i;
            for k in i.saturating_sub(p)..i {
                y[k] -= self.band[ri + k] * y[i];
            }
        }
        y
    }
}
