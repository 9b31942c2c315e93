use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::generate::complex_gaussian;
use crate::channel::geometry::SystemGeometry;
use crate::channel::types::{ChannelTensor, PilotObservation};
use crate::error::{Error, Result};

/// Noise variance per complex entry at the given SNR (unit channel power).
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Receives unit pilot symbols through `h` on the geometry's pilot tones
/// with circular complex Gaussian noise of variance `10^(−snr_db/10)`.
/// `snr_db = +∞` disables the noise.
pub fn observe_pilots(h: &ChannelTensor, geom: &SystemGeometry, snr_db: f64, seed: u64) -> Result<PilotObservation> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Validation(format!("invalid SNR {snr_db}")));
    }
    if (h.n_rx, h.n_sub, h.n_tx) != (geom.n_rx, geom.n_sub, geom.n_tx) {
        return Err(Error::Shape("channel does not match geometry".into()));
    }
    let pilots = &geom.pilots.indices;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = if snr_db.is_infinite() { 0.0 } else { noise_variance(snr_db) };
    let symbols = vec![Complex64::new(1.0, 0.0); pilots.len()];
    let mut data = Vec::with_capacity(h.n_rx * pilots.len() * h.n_tx);
    for r in 0..h.n_rx {
        for (p, &k) in pilots.iter().enumerate() {
            for t in 0..h.n_tx {
                let mut y = h.get(r, k, t) * symbols[p];
                if var > 0.0 {
                    y += complex_gaussian(&mut rng, var);
                }
                data.push(y);
            }
        }
    }
    Ok(PilotObservation {
        n_rx: h.n_rx,
        n_tx: h.n_tx,
        pilot_indices: pilots.clone(),
        symbols,
        data,
        snr_db,
        seed,
    })
}

/// Closed-form least-squares estimate `ĥ = y / s` on each pilot tone.
pub fn ls_estimate(obs: &PilotObservation) -> Result<ChannelTensor> {
    if obs.symbols.len() != obs.n_pilots() {
        return Err(Error::Shape("one pilot symbol per pilot tone required".into()));
    }
    if let Some(p) = obs.symbols.iter().position(|s| s.norm_sqr() == 0.0) {
        return Err(Error::Validation(format!("pilot symbol {p} is zero")));
    }
    let mut out = obs.as_channel();
    let np = obs.n_pilots();
    for r in 0..obs.n_rx {
        for (p, s) in obs.symbols.iter().enumerate() {
            if *s == Complex64::new(1.0, 0.0) {
                continue;
            }
            for t in 0..obs.n_tx {
                out.data[(r * np + p) * obs.n_tx + t] /= s;
            }
        }
    }
    Ok(out)
}

/// Linear interpolation of real and imaginary parts across subcarriers,
/// holding the outermost pilot values constant beyond the pilot span.
pub fn interpolate_frequency(partial: &ChannelTensor, geom: &SystemGeometry) -> Result<ChannelTensor> {
    let pilots = &geom.pilots.indices;
    if pilots.len() < 2 {
        return Err(Error::Validation("interpolation needs at least two pilots".into()));
    }
    if partial.n_sub != pilots.len() || partial.n_rx != geom.n_rx || partial.n_tx != geom.n_tx {
        return Err(Error::Shape("pilot channel does not match geometry".into()));
    }
    let mut out = ChannelTensor::zeros(geom.n_rx, geom.n_sub, geom.n_tx);
    let last = pilots.len() - 1;
    for k in 0..geom.n_sub {
        // segment [j, j+1] containing k, or a clamped end
        let (j0, j1, w) = if k <= pilots[0] {
            (0, 0, 0.0)
        } else if k >= pilots[last] {
            (last, last, 0.0)
        } else {
            let j = pilots.partition_point(|&p| p <= k) - 1;
            let w = (k - pilots[j]) as f64 / (pilots[j + 1] - pilots[j]) as f64;
            (j, j + 1, w)
        };
        for r in 0..geom.n_rx {
            for t in 0..geom.n_tx {
                let a = partial.get(r, j0, t);
                let b = partial.get(r, j1, t);
                let v = if w == 0.0 { a } else { a * (1.0 - w) + b * w };
                out.set(r, k, t, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::geometry::PilotPattern;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn geom(n_sub: usize, pilots: Vec<usize>) -> SystemGeometry {
        SystemGeometry::new(2, 1, n_sub, 1, PilotPattern::custom(pilots).unwrap(), 15e3).unwrap()
    }

    fn ramp(n_sub: usize) -> ChannelTensor {
        let mut h = ChannelTensor::zeros(1, n_sub, 2);
        for k in 0..n_sub {
            h.set(0, k, 0, c(k as f64, 1.0));
            h.set(0, k, 1, c(-1.0, 2.0 * k as f64));
        }
        h
    }

    #[test]
    fn noiseless_observation_and_ls() {
        let g = geom(6, vec![1, 4]);
        let h = ramp(6);
        let obs = observe_pilots(&h, &g, f64::INFINITY, 3).unwrap();
        assert_eq!(obs.as_channel(), h.select_subcarriers(&[1, 4]).unwrap());
        let est = ls_estimate(&obs).unwrap();
        assert_eq!(est.data, obs.data);
    }

    #[test]
    fn ls_divides_by_symbols() {
        let g = geom(4, vec![0, 2]);
        let mut obs = observe_pilots(&ramp(4), &g, f64::INFINITY, 0).unwrap();
        obs.symbols = vec![c(2.0, 0.0), c(0.0, 1.0)];
        let est = ls_estimate(&obs).unwrap();
        assert_eq!(est.get(0, 0, 0), obs.get(0, 0, 0) / 2.0);
        assert_eq!(est.get(0, 1, 1), obs.get(0, 1, 1) / c(0.0, 1.0));
        obs.symbols[0] = c(0.0, 0.0);
        assert!(ls_estimate(&obs).is_err());
    }

    #[test]
    fn midpoint_and_hold() {
        let g = geom(5, vec![1, 3]);
        let mut p = ChannelTensor::zeros(1, 2, 2);
        p.set(0, 0, 0, c(0.0, 0.0));
        p.set(0, 1, 0, c(2.0, -4.0));
        let full = interpolate_frequency(&p, &g).unwrap();
        assert_eq!(full.get(0, 2, 0), c(1.0, -2.0));
        assert_eq!(full.get(0, 0, 0), c(0.0, 0.0));
        assert_eq!(full.get(0, 4, 0), c(2.0, -4.0));
    }

    #[test]
    fn all_pilots_is_identity() {
        let g = geom(6, (0..6).collect());
        let h = ramp(6);
        let obs = observe_pilots(&h, &g, f64::INFINITY, 0).unwrap();
        let full = interpolate_frequency(&ls_estimate(&obs).unwrap(), &g).unwrap();
        assert_eq!(full, h);
    }

    #[test]
    fn needs_two_pilots() {
        let g = geom(4, vec![2]);
        let p = ChannelTensor::zeros(1, 1, 2);
        assert!(interpolate_frequency(&p, &g).is_err());
    }
}
