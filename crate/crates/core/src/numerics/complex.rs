use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};

/// Dense complex matrix with split real/imaginary storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return shape_err(format!(
                "{rows}x{cols} complex matrix with {} re / {} im values",
                re.len(),
                im.len()
            ));
        }
        Ok(Self { rows, cols, re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, re: vec![0.0; rows * cols], im: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
    }

    /// `v · vᴴ`
    pub fn outer(v: &[Complex64]) -> Self {
        Self::from_fn(v.len(), v.len(), |r, c| v[r] * v[c].conj())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let i = r * self.cols + c;
        Complex64::new(self.re[i], self.im[i])
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, z: Complex64) {
        let i = r * self.cols + c;
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r).conj())
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "complex matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                for c in 0..other.cols {
                    let i = r * other.cols + c;
                    let b = other.get(k, c);
                    out.re[i] += a.re * b.re - a.im * b.im;
                    out.im[i] += a.re * b.im + a.im * b.re;
                }
            }
        }
        Ok(out)
    }

    /// `Aᴴ A` for this matrix `A`.
    pub fn gram(&self) -> ComplexMatrix {
        let mut out = Self::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            for i in 0..self.cols {
                let a = self.get(r, i).conj();
                for j in 0..self.cols {
                    let b = self.get(r, j);
                    let k = i * self.cols + j;
                    out.re[k] += a.re * b.re - a.im * b.im;
                    out.im[k] += a.re * b.im + a.im * b.re;
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &ComplexMatrix, alpha: f64) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return shape_err("complex add shape mismatch");
        }
        self.re.iter_mut().zip(&other.re).for_each(|(a, b)| *a += alpha * b);
        self.im.iter_mut().zip(&other.im).for_each(|(a, b)| *a += alpha * b);
        Ok(())
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Largest `|A[r,c] − conj(A[c,r])|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    pub fn check_square(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::Validation(format!("matrix is {}x{}, not square", self.rows, self.cols)));
        }
        Ok(())
    }
}

pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `aᴴ b`
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
