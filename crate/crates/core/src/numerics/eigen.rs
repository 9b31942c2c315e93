use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::complex::{inner, vec_norm, ComplexMatrix};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;
const HERMITIAN_TOL: f64 = 1e-8;

/// Dominant eigenvalue and unit-norm eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<Complex64>,
}

/// Rotates `v` so that its largest-magnitude entry (first one on ties) is
/// real and nonnegative.
pub fn normalize_phase(v: &mut [Complex64]) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag > 0.0 {
        let rot = v[best].conj() / best_mag;
        v.iter_mut().for_each(|z| *z *= rot);
        v[best] = Complex64::new(v[best].re, 0.0);
    }
}

/// Dominant eigenpair of a Hermitian positive semidefinite matrix by power
/// iteration.
///
/// Stops once `‖A v − λ v‖ ≤ 1e-10 · λ` or after 10 000 iterations. The
/// returned vector has unit norm and its largest entry real nonnegative.
pub fn hermitian_top_eigpair(a: &ComplexMatrix) -> Result<EigenPair> {
    a.check_square()?;
    let n = a.rows;
    if n == 0 {
        return Err(Error::Validation("empty matrix".into()));
    }
    let scale = a.max_abs();
    let defect = a.hermitian_defect();
    if defect > HERMITIAN_TOL * scale.max(1.0) {
        return Err(Error::Validation(format!("matrix is not Hermitian (defect {defect:e})")));
    }
    if scale == 0.0 {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[0] = Complex64::new(1.0, 0.0);
        return Ok(EigenPair { value: 0.0, vector: e });
    }

    // Start from the column with the largest norm: it lies in A's range.
    let col_norm = |c: usize| (0..n).map(|r| a.get(r, c).norm_sqr()).sum::<f64>();
    let start = (0..n).fold(0, |best, c| if col_norm(c) > col_norm(best) { c } else { best });
    let mut x: Vec<Complex64> = (0..n).map(|r| a.get(r, start)).collect();
    let nrm = vec_norm(&x);
    x.iter_mut().for_each(|z| *z /= nrm);

    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let y = a.mul_vec(&x);
        let lambda = inner(&x, &y).re;
        residual = y
            .iter()
            .zip(&x)
            .map(|(yi, xi)| (yi - xi * lambda).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual <= POWER_TOL * lambda.abs().max(f64::MIN_POSITIVE) {
            normalize_phase(&mut x);
            return Ok(EigenPair { value: lambda.max(0.0), vector: x });
        }
        let ny = vec_norm(&y);
        if ny == 0.0 {
            // x sits in the null space; everything else is zero too.
            normalize_phase(&mut x);
            return Ok(EigenPair { value: 0.0, vector: x });
        }
        x = y.into_iter().map(|z| z / ny).collect();
    }
    Err(Error::Convergence {
        iterations: POWER_MAX_ITER,
        residual,
        iterate: x.iter().flat_map(|z| [z.re, z.im]).collect(),
    })
}
