#![allow(dead_code)]

use flowmat_core::numerics::{ComplexMatrix, Tensor};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn cgauss<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `B Bᴴ` for a random complex Gaussian `n × n` matrix `B`.
pub fn random_psd<R: Rng>(n: usize, rng: &mut R) -> ComplexMatrix {
    let b = ComplexMatrix::from_fn(n, n, |_, _| cgauss(rng));
    b.matmul(&b.conj_transpose()).unwrap()
}

/// Cyclic Jacobi eigendecomposition of a dense symmetric matrix (row-major).
/// Returns eigenvalues and eigenvectors (as columns of `v`), unsorted.
pub fn jacobi_symmetric(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    (0..n).for_each(|i| v[i * n + i] = 1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i].powi(2)).sum();
        if off <= 1e-30 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Top eigenpair of a Hermitian matrix through the symmetric real embedding
/// `[[A, −B], [B, A]]`, whose spectrum is that of `A` doubled.
pub fn brute_top_eigpair(m: &ComplexMatrix) -> (f64, Vec<Complex64>) {
    let n = m.rows;
    let w = 2 * n;
    let mut s = vec![0.0; w * w];
    for r in 0..n {
        for c in 0..n {
            let z = m.get(r, c);
            s[r * w + c] = z.re;
            s[r * w + n + c] = -z.im;
            s[(n + r) * w + c] = z.im;
            s[(n + r) * w + n + c] = z.re;
        }
    }
    let (vals, vecs) = jacobi_symmetric(&s, w);
    let top = (0..w).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
    let mut v: Vec<Complex64> = (0..n).map(|i| Complex64::new(vecs[i * w + top], vecs[(n + i) * w + top])).collect();
    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= nrm);
    (vals[top], v)
}

/// Tokens with unit-norm rows, deterministic in `seed`.
pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> Tensor {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::randn(&[rows, cols], 1.0, &mut rng);
    for r in t.data_mut().chunks_mut(cols) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    t
}
