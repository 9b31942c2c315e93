use num_complex::Complex64;

use crate::channel::{ChannelTensor, EigenMatrix};
use crate::error::{shape_err, Error, Result};
use crate::numerics::complex::{inner, vec_norm};
use crate::numerics::Tensor;
use crate::quantizer::UniformQuantizerSpec;

/// Floor of the reported NMSE.
pub const NMSE_FLOOR_DB: f64 = -120.0;

/// `10·log10(Σ|ĥ − h|² / Σ|h|²)` over all entries of all samples, clamped
/// below at −120 dB.
pub fn nmse_db_batch(estimates: &[ChannelTensor], truths: &[ChannelTensor]) -> Result<f64> {
    if estimates.len() != truths.len() || truths.is_empty() {
        return shape_err(format!("{} estimates for {} channels", estimates.len(), truths.len()));
    }
    let (mut err, mut pow) = (0.0, 0.0);
    for (e, t) in estimates.iter().zip(truths) {
        if (e.n_rx, e.n_sub, e.n_tx) != (t.n_rx, t.n_sub, t.n_tx) {
            return shape_err("estimate and truth differ in shape");
        }
        err += e.data.iter().zip(&t.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        pow += t.power();
    }
    if pow == 0.0 {
        return Err(Error::Validation("all-zero truth".into()));
    }
    Ok((10.0 * (err / pow).log10()).max(NMSE_FLOOR_DB))
}

pub fn nmse_db(estimate: &ChannelTensor, truth: &ChannelTensor) -> Result<f64> {
    nmse_db_batch(std::slice::from_ref(estimate), std::slice::from_ref(truth))
}

/// Mean over samples and subbands of `|wᴴ w′| / (‖w‖ ‖w′‖)`.
pub fn rho(truth: &[EigenMatrix], pred: &[EigenMatrix]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return shape_err(format!("{} predictions for {} samples", pred.len(), truth.len()));
    }
    let (mut acc, mut count) = (0.0, 0usize);
    for (w, p) in truth.iter().zip(pred) {
        if (w.n_subband, w.n_tx) != (p.n_subband, p.n_tx) {
            return shape_err("eigen matrices differ in shape");
        }
        for s in 0..w.n_subband {
            let (a, b) = (w.row(s), p.row(s));
            let den = vec_norm(a) * vec_norm(b);
            if den == 0.0 {
                return Err(Error::Validation(format!("zero-norm row at subband {s}")));
            }
            acc += (inner(a, b).norm() / den).min(1.0);
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Input to [`freq_correlation`]: spatial vectors per subcarrier or per subband.
#[derive(Debug, Clone, Copy)]
pub enum FreqInput<'a> {
    Channel(&'a ChannelTensor),
    Eigen(&'a EigenMatrix),
}

/// `C[i,j] = |⟨x_i, x_j⟩| / (‖x_i‖ ‖x_j‖)`; cells touching a zero vector
/// are NaN.
pub fn freq_correlation(input: FreqInput<'_>) -> Result<Tensor> {
    let vecs: Vec<Vec<Complex64>> = match input {
        FreqInput::Channel(h) => (0..h.n_sub).map(|k| h.spatial_vector(k)).collect(),
        FreqInput::Eigen(w) => (0..w.n_subband).map(|s| w.row(s).to_vec()).collect(),
    };
    let n = vecs.len();
    if n < 2 {
        return Err(Error::Validation("correlation needs at least two frequency units".into()));
    }
    let norms: Vec<f64> = vecs.iter().map(|v| vec_norm(v)).collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        log::warn!("frequency unit {i} has a zero spatial vector");
    }
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                f64::NAN
            } else if i == j {
                1.0
            } else {
                (inner(&vecs[i], &vecs[j]).norm() / (norms[i] * norms[j])).min(1.0)
            };
            c[i * n + j] = v;
            c[j * n + i] = v;
        }
    }
    Tensor::new(&[n, n], c)
}

/// Mean of the off-diagonal entries.
pub fn mean_off_diagonal(c: &Tensor) -> f64 {
    let n = c.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += c.get(i, j);
            }
        }
    }
    acc / (n * (n - 1)) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitBudget {
    Bits(usize),
    Unlimited,
}

/// Non-learned feedback at a bit budget: the first `s` subbands, each real
/// coordinate quantized uniformly on `[−1, 1]`, the last kept row held over
/// the remaining subbands, rows renormalized.
///
/// `s = min(N, bits / (2·N_t))` and each scalar gets
/// `min(16, bits / (s·2·N_t))` bits.
pub fn baseline_truncation(w: &EigenMatrix, budget: BitBudget) -> Result<EigenMatrix> {
    let per_row = 2 * w.n_tx;
    let (s, spec) = match budget {
        BitBudget::Unlimited => (w.n_subband, None),
        BitBudget::Bits(bits) => {
            let s = (bits / per_row).min(w.n_subband);
            if s == 0 {
                return Err(Error::Validation(format!("{bits} bits cannot carry one subband of {} antennas", w.n_tx)));
            }
            let b = (bits / (s * per_row)).min(16) as u8;
            (s, Some(UniformQuantizerSpec::new(b, -1.0, 1.0)?))
        }
    };
    let q = |x: f64| spec.map_or(x, |sp| sp.value(sp.index(x)));
    let mut out = EigenMatrix::new(w.n_subband, w.n_tx, vec![Complex64::new(0.0, 0.0); w.data.len()])?;
    for k in 0..w.n_subband {
        let src = w.row(k.min(s - 1));
        for (o, z) in out.row_mut(k).iter_mut().zip(src) {
            *o = Complex64::new(q(z.re), q(z.im));
        }
    }
    out.normalize_rows();
    Ok(out)
}

/// Bits actually spent by [`baseline_truncation`].
pub fn truncation_bits(n_subband: usize, n_tx: usize, bits: usize) -> usize {
    let per_row = 2 * n_tx;
    let s = (bits / per_row).min(n_subband);
    if s == 0 {
        return 0;
    }
    s * per_row * (bits / (s * per_row)).min(16)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn chan() -> ChannelTensor {
        ChannelTensor::new(1, 2, 2, vec![c(1.0, 0.5), c(-0.2, 0.3), c(0.0, 1.0), c(2.0, 0.0)]).unwrap()
    }

    #[test]
    fn nmse_cases() {
        let h = chan();
        assert_eq!(nmse_db(&h, &h).unwrap(), NMSE_FLOOR_DB);
        assert_eq!(nmse_db(&ChannelTensor::zeros(1, 2, 2), &h).unwrap(), 0.0);
        let mut h2 = h.clone();
        h2.scale(c(2.0, 0.0));
        assert_eq!(nmse_db(&h2, &h).unwrap(), 0.0);
        assert!(nmse_db(&h, &ChannelTensor::zeros(1, 2, 2)).is_err());
    }

    #[test]
    fn rho_cases() {
        let w = EigenMatrix::new(2, 2, vec![c(0.6, 0.0), c(0.0, 0.8), c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(rho(&[w.clone()], &[w.clone()]).unwrap(), 1.0);
        let mut r = w.clone();
        r.data.iter_mut().for_each(|z| *z *= Complex64::from_polar(1.0, std::f64::consts::PI / 3.0));
        assert!((rho(&[w.clone()], &[r]).unwrap() - 1.0).abs() < 1e-15);
        let o = EigenMatrix::new(2, 2, vec![c(0.0, 0.8), c(0.6, 0.0), c(0.0, 0.0), c(0.0, 3.0)]).unwrap();
        let v = rho(&[w.clone()], &[o]).unwrap();
        assert!(v.abs() < 1e-15);
        let z = EigenMatrix::new(2, 2, vec![c(0.0, 0.0); 4]).unwrap();
        assert!(rho(&[w], &[z]).is_err());
    }

    #[test]
    fn correlation_properties() {
        let c = freq_correlation(FreqInput::Channel(&chan())).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(0, 1), c.get(1, 0));
        let z = ChannelTensor::zeros(1, 3, 2);
        assert!(freq_correlation(FreqInput::Channel(&z)).unwrap().get(0, 1).is_nan());
        assert!(freq_correlation(FreqInput::Channel(&ChannelTensor::zeros(1, 1, 2))).is_err());
    }

    #[test]
    fn truncation_cases() {
        let w = EigenMatrix::new_unit(3, 2, vec![c(0.6, 0.0), c(0.0, 0.8), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)]).unwrap();
        let full = baseline_truncation(&w, BitBudget::Unlimited).unwrap();
        assert!((rho(&[w.clone()], &[full]).unwrap() - 1.0).abs() < 1e-12);
        assert!(baseline_truncation(&w, BitBudget::Bits(3)).is_err());
        let one = baseline_truncation(&w, BitBudget::Bits(4)).unwrap();
        assert_eq!(one.row(2), one.row(0));
        assert_eq!(truncation_bits(3, 2, 4), 4);
        assert_eq!(truncation_bits(3, 2, 30), 24);
    }
}
