//! Symmetric banded storage and Cholesky factorization.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Symmetric `n x n` matrix with `bandwidth` sub-diagonals. Only the lower
/// band is stored: `data[j * (bandwidth + 1) + d] = A[j + d][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bandwidth {
            0.0
        } else {
            self.data[lo * (self.bandwidth + 1) + d]
        }
    }

    /// Adds `v` to `(i, j)` and, implicitly, `(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        debug_assert!(d <= self.bandwidth);
        self.data[lo * (self.bandwidth + 1) + d] += v;
    }

    /// `self + scale * other`, widening the band if needed.
    pub fn add_scaled(&self, scale: f64, other: &SymBandMatrix) -> SymBandMatrix {
        assert_eq!(self.n, other.n);
        let bw = self.bandwidth.max(other.bandwidth);
        let mut out = SymBandMatrix::zeros(self.n, bw);
        for j in 0..self.n {
            for d in 0..=bw.min(self.n - 1 - j) {
                let v = self.get(j + d, j) + scale * other.get(j + d, j);
                out.data[j * (bw + 1) + d] = v;
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let base = j * (self.bandwidth + 1);
            y[j] += self.data[base] * x[j];
            for d in 1..=self.bandwidth.min(self.n - 1 - j) {
                let a = self.data[base + d];
                y[j + d] += a * x[j];
                y[j] += a * x[j + d];
            }
        }
        y
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        BandCholesky::factor(self)
    }
}

/// Lower factor `L` with `A = L L^T`, same band layout as the input.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    fn factor(a: &SymBandMatrix) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth;
        let stride = bw + 1;
        let mut l = a.data.clone();
        // Singularity of the penalized systems is decided structurally by the
        // callers; here only a numerically indefinite pivot is fatal.
        // L[i][k] lives at l[k * stride + (i - k)].
        for j in 0..n {
            let k0 = j.saturating_sub(bw);
            let mut diag = l[j * stride];
            for k in k0..j {
                let v = l[k * stride + (j - k)];
                diag -= v * v;
            }
            if !(diag > 0.0 && diag.is_finite()) {
                return Err(Error::SingularSystem(format!(
                    "non-positive pivot {diag:e} at row {j}"
                )));
            }
            let diag = diag.sqrt();
            l[j * stride] = diag;
            for i in (j + 1)..=(j + bw).min(n - 1) {
                let mut v = l[j * stride + (i - j)];
                for k in i.saturating_sub(bw)..j {
                    v -= l[k * stride + (i - k)] * l[k * stride + (j - k)];
                }
                l[j * stride + (i - j)] = v / diag;
            }
        }
        Ok(Self {
            n,
            bandwidth: bw,
            data: l,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let bw = self.bandwidth;
        let stride = bw + 1;
        // L y = b
        for i in 0..n {
            let mut v = x[i];
            for k in i.saturating_sub(bw)..i {
                v -= self.data[k * stride + (i - k)] * x[k];
            }
            x[i] = v / self.data[i * stride];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..=(i + bw).min(n - 1) {
                v -= self.data[i * stride + (k - i)] * x[k];
            }
            x[i] = v / self.data[i * stride];
        }
    }

    /// `tr(A^{-1} M)` by solving against each column of `M`.
    pub fn trace_solve(&self, m: &SymBandMatrix) -> f64 {
        let n = self.n;
        let mut col = vec![0.0; n];
        let mut tr = 0.0;
        for j in 0..n {
            col.fill(0.0);
            let lo = j.saturating_sub(m.bandwidth);
            let hi = (j + m.bandwidth).min(n - 1);
            for (i, c) in col.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *c = m.get(i, j);
            }
            self.solve_in_place(&mut col);
            tr += col[j];
        }
        tr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, bw: usize) -> SymBandMatrix {
        let mut a = SymBandMatrix::zeros(n, bw);
        for j in 0..n {
            a.add(j, j, 4.0 + j as f64 * 0.1);
            for d in 1..=bw.min(n - 1 - j) {
                a.add(j + d, j, 1.0 / (1.0 + d as f64 + j as f64));
            }
        }
        a
    }

    #[test]
    fn solve_matches_dense() {
        let a = sample(9, 3);
        let b: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let ax = a.mul_vec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
        let dense = a.to_dense();
        assert_eq!(dense.transpose(), dense);
        let y = dense * nalgebra::DVector::from_vec(x.clone());
        for (u, v) in y.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn trace_solve_identity() {
        let a = sample(7, 2);
        let tr = a.cholesky().unwrap().trace_solve(&a);
        assert!((tr - 7.0).abs() < 1e-12);
    }

    #[test]
    fn singular_detected() {
        let mut a = SymBandMatrix::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(a.cholesky(), Err(Error::SingularSystem(_))));
    }
}
