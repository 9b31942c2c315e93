use num_complex::Complex64;

use crate::channel::geometry::SystemGeometry;
use crate::channel::types::{ChannelTensor, EigenMatrix};
use crate::error::{Error, Result};
use crate::numerics::{hermitian_top_eigpair, ComplexMatrix, EigenPair};

/// Subband-averaged `Hᴴ H` over the subcarriers of subband `s`.
pub fn subband_gram(h: &ChannelTensor, s: usize, width: usize) -> ComplexMatrix {
    let mut acc = ComplexMatrix::zeros(h.n_tx, h.n_tx);
    for k in s * width..(s + 1) * width {
        acc.add_scaled(&h.subcarrier(k).gram(), 1.0 / width as f64)
            .expect("gram shapes agree");
    }
    acc
}

/// Dominant eigenpair of each subband's averaged Gram matrix.
pub fn subband_eigenpairs(h: &ChannelTensor, n_subband: usize) -> Result<Vec<EigenPair>> {
    if n_subband == 0 || h.n_sub % n_subband != 0 {
        return Err(Error::Validation(format!("{n_subband} subbands for {} subcarriers", h.n_sub)));
    }
    let width = h.n_sub / n_subband;
    (0..n_subband).map(|s| hermitian_top_eigpair(&subband_gram(h, s, width))).collect()
}

/// Eigen-precoder per subband: the dominant eigenvector of the
/// subband-averaged `Hᴴ H`, one unit-norm row per subband.
pub fn compute_precoders(h: &ChannelTensor, geom: &SystemGeometry) -> Result<EigenMatrix> {
    if (h.n_rx, h.n_sub, h.n_tx) != (geom.n_rx, geom.n_sub, geom.n_tx) {
        return Err(Error::Shape("channel does not match geometry".into()));
    }
    let pairs = subband_eigenpairs(h, geom.n_subband)?;
    let data: Vec<Complex64> = pairs.into_iter().flat_map(|p| p.vector).collect();
    EigenMatrix::new(geom.n_subband, geom.n_tx, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::geometry::PilotPattern;
    use crate::numerics::complex::{inner, vec_norm};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rank_one_channel_recovers_v() {
        let u = [c(0.5, 0.1), c(-0.3, 0.8)];
        let raw = [c(0.2, 0.1), c(-0.7, 0.3), c(0.4, -0.4), c(0.1, 0.9)];
        let n = vec_norm(&raw);
        let v: Vec<_> = raw.iter().map(|z| z / n).collect();
        let mut h = ChannelTensor::zeros(2, 4, 4);
        for k in 0..4 {
            let phase = Complex64::from_polar(1.0, 0.7 * k as f64);
            for r in 0..2 {
                for t in 0..4 {
                    h.set(r, k, t, phase * u[r] * v[t].conj());
                }
            }
        }
        let geom = SystemGeometry::new(4, 2, 4, 2, PilotPattern::custom(vec![0, 2]).unwrap(), 1.0).unwrap();
        let w = compute_precoders(&h, &geom).unwrap();
        assert_eq!((w.n_subband, w.n_tx), (2, 4));
        for s in 0..2 {
            // H = u vᴴ  ⇒  Hᴴ H ∝ v vᴴ
            assert!(inner(w.row(s), &v).norm() > 1.0 - 1e-8);
            assert!((vec_norm(w.row(s)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_geometry_mismatch() {
        let h = ChannelTensor::zeros(1, 4, 2);
        let geom = SystemGeometry::new(3, 1, 4, 2, PilotPattern::custom(vec![0, 2]).unwrap(), 1.0).unwrap();
        assert!(compute_precoders(&h, &geom).is_err());
    }
}
