use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::geometry::{MultipathProfile, SystemGeometry};
use crate::channel::types::ChannelTensor;
use crate::error::Result;

/// Half-wavelength uniform linear array response.
pub fn steering_vector(n: usize, angle: f64) -> Vec<Complex64> {
    (0..n).map(|i| Complex64::from_polar(1.0, PI * i as f64 * angle.sin())).collect()
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
}

/// Geometric multipath channel:
/// `H[r,k,t] = Σ_l α_l · a_rx(θ_l)[r] · a_tx(φ_l)[t] · exp(−j2π k Δf τ_l)`.
///
/// Path gains are complex Gaussian, delays uniform in `[0, delay_spread]`,
/// angles spread uniformly around one departure and one arrival cluster
/// centre. The result is scaled to unit mean power per entry.
pub fn generate_channel(geom: &SystemGeometry, profile: &MultipathProfile) -> Result<ChannelTensor> {
    geom.validate()?;
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let centre_tx = rng.random_range(-PI / 3.0..PI / 3.0);
    let centre_rx = rng.random_range(-PI / 2.0..PI / 2.0);
    let half = profile.angle_spread / 2.0;
    let mut h = ChannelTensor::zeros(geom.n_rx, geom.n_sub, geom.n_tx);
    for _ in 0..profile.n_paths {
        let alpha = complex_gaussian(&mut rng, 1.0 / profile.n_paths as f64);
        let tau = rng.random_range(0.0..=profile.delay_spread);
        let phi = centre_tx + if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
        let theta = centre_rx + if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
        let a_tx = steering_vector(geom.n_tx, phi);
        let a_rx = steering_vector(geom.n_rx, theta);
        for k in 0..geom.n_sub {
            let ramp = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * geom.subcarrier_spacing * tau);
            let gain = alpha * ramp;
            for r in 0..geom.n_rx {
                let gr = gain * a_rx[r];
                for t in 0..geom.n_tx {
                    let i = h.idx(r, k, t);
                    h.data[i] += gr * a_tx[t];
                }
            }
        }
    }
    let mean_power = h.power() / h.data.len() as f64;
    if mean_power > 0.0 {
        h.scale(Complex64::new(1.0 / mean_power.sqrt(), 0.0));
    }
    Ok(h)
}

/// `count` channels with seeds `base_seed, base_seed + 1, …`.
pub fn generate_batch(
    geom: &SystemGeometry,
    profile: &MultipathProfile,
    base_seed: u64,
    count: usize,
) -> Result<Vec<ChannelTensor>> {
    (0..count as u64)
        .map(|i| {
            let p = MultipathProfile { seed: base_seed.wrapping_add(i), ..profile.clone() };
            generate_channel(geom, &p)
        })
        .collect()
}
