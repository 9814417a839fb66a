//! Dense complex Hermitian positive-definite factorization.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square complex matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn scaled_identity(n: usize, diag: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(diag, 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `self += alpha * v v^H`, lower triangle only.
    pub fn rank_one_lower(&mut self, alpha: f64, v: &[Complex64]) {
        debug_assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let vi = v[i] * alpha;
            let row = &mut self.data[i * self.n..i * self.n + i + 1];
            for (a, vj) in row.iter_mut().zip(v) {
                *a += vi * vj.conj();
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular factor `A = L L^H`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMatrix,
}

impl Cholesky {
    /// Factors a Hermitian matrix, reading only its lower triangle.
    pub fn factor(mut a: CMatrix) -> Result<Self> {
        let n = a.n;
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= a[(j, k)].norm_sqr();
            }
            if d.is_nan() || d <= 0.0 || d.is_infinite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            a[(j, j)] = Complex64::new(d, 0.0);
            let inv = 1.0 / d;
            for i in j + 1..n {
                let (row_i, row_j) = (i * n, j * n);
                let mut s = a.data[row_i + j];
                for k in 0..j {
                    s -= a.data[row_i + k] * a.data[row_j + k].conj();
                }
                a.data[row_i + j] = s * inv;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                a[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
        Ok(Self { l: a })
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [Complex64]) {
        let n = self.l.n;
        for i in 0..n {
            let row = &self.l.data[i * n..i * n + i];
            let s: Complex64 = row.iter().zip(&b[..i]).map(|(l, y)| l * y).sum();
            b[i] = (b[i] - s) / self.l.data[i * n + i].re;
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.l.n;
        let mut x = b.to_vec();
        self.forward(&mut x);
        for i in (0..n).rev() {
            let s: Complex64 = (i + 1..n)
                .map(|k| self.l.data[k * n + i].conj() * x[k])
                .sum();
            x[i] = (x[i] - s) / self.l.data[i * n + i].re;
        }
        x
    }

    /// `b^H A^{-1} b = ||L^{-1} b||^2`.
    pub fn quad_form_inv(&self, b: &[Complex64]) -> f64 {
        let mut y = b.to_vec();
        self.forward(&mut y);
        y.iter().map(|z| z.norm_sqr()).sum()
    }
}
