//! Cholesky factorization of `diag(p) + σI + Aᵀ diag(ρ) A`, banded when the
//! sparsity of `A` allows it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Lower-triangular band Cholesky factor with half-bandwidth `bw`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i stores L(i, i-bw ..= i) at offsets 0..=bw
    band: Vec<f64>,
}

impl BandedCholesky {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Factors the band whose lower part is given in the same layout.
    pub fn factor(n: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        assert_eq!(band.len(), n * (bw + 1));
        let w = bw + 1;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut sum = band[i * w + (j + bw - i)];
                for k in lo..j {
                    sum -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if i == j {
                    if sum.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !sum.is_finite() {
                        return Err(Error::Solver(format!(
                            "matrix not positive definite at pivot {i}"
                        )));
                    }
                    band[i * w + bw] = sum.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = sum / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        for i in 0..self.n {
            let mut sum = x[i];
            for k in i.saturating_sub(self.bw)..i {
                sum -= self.band[self.idx(i, k)] * x[k];
            }
            x[i] = sum / self.band[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut sum = x[i];
            for k in (i + 1)..(i + self.bw + 1).min(self.n) {
                sum -= self.band[self.idx(k, i)] * x[k];
            }
            x[i] = sum / self.band[self.idx(i, i)];
        }
        x
    }
}

#[derive(Debug, Clone)]
pub enum SpdFactor {
    Dense(Cholesky<f64, Dyn>),
    Banded(BandedCholesky),
}

impl SpdFactor {
    /// Factors `diag(p) + σI + Aᵀ diag(ρ) A`.
    pub fn normal_matrix(p: &DVector<f64>, sigma: f64, a: &CsrMatrix, rho: &DVector<f64>) -> Result<Self> {
        let n = a.ncols();
        let bw = a.normal_bandwidth();
        if n > 64 && 4 * (bw + 1) < n {
            let w = bw + 1;
            let mut band = vec![0.0; n * w];
            for i in 0..n {
                band[i * w + bw] = p[i] + sigma;
            }
            for r in 0..a.nrows() {
                let entries: Vec<(usize, f64)> = a.row(r).collect();
                for &(ci, vi) in &entries {
                    for &(cj, vj) in &entries {
                        if cj <= ci {
                            band[ci * w + (cj + bw - ci)] += rho[r] * vi * vj;
                        }
                    }
                }
            }
            Ok(Self::Banded(BandedCholesky::factor(n, bw, band)?))
        } else {
            let mut k = DMatrix::from_diagonal(&p.add_scalar(sigma));
            for r in 0..a.nrows() {
                let entries: Vec<(usize, f64)> = a.row(r).collect();
                for &(ci, vi) in &entries {
                    for &(cj, vj) in &entries {
                        k[(ci, cj)] += rho[r] * vi * vj;
                    }
                }
            }
            Cholesky::new(k)
                .map(Self::Dense)
                .ok_or_else(|| Error::Solver("normal matrix not positive definite".into()))
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Dense(c) => c.solve(b),
            Self::Banded(c) => c.solve(b),
        }
    }

    pub fn is_banded(&self) -> bool {
        matches!(self, Self::Banded(_))
    }
}
