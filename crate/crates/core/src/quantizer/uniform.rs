use crate::error::{Error, Result};
use crate::quantizer::payload::{BitPayload, Scheme};

/// Mid-rise uniform scalar quantizer over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantizerSpec {
    pub bits: u8,
    pub lo: f64,
    pub hi: f64,
}

impl UniformQuantizerSpec {
    pub fn new(bits: u8, lo: f64, hi: f64) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::Validation(format!("{bits} bits outside [1, 16]")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!("invalid range [{lo}, {hi}]")));
        }
        Ok(Self { bits, lo, hi })
    }

    /// Range spanning `[min, max]` of `values`, widened by `margin` of its
    /// width on each side.
    pub fn calibrated(bits: u8, values: &[f64], margin: f64) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Validation("no finite values to calibrate from".into()));
        }
        let width = (hi - lo).max(1e-6);
        Self::new(bits, lo - margin * width, hi + margin * width)
    }

    pub fn levels(&self) -> u32 {
        1u32 << self.bits
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.levels() as f64
    }

    pub fn scheme(&self) -> Scheme {
        Scheme::Uniform { bits: self.bits, lo: self.lo, hi: self.hi }
    }

    pub fn index(&self, x: f64) -> u32 {
        let top = self.levels() - 1;
        let q = ((x - self.lo) / self.step()).floor();
        if q.is_nan() || q <= 0.0 {
            0
        } else if q >= top as f64 {
            top
        } else {
            q as u32
        }
    }

    pub fn value(&self, index: u32) -> f64 {
        self.lo + (index as f64 + 0.5) * self.step()
    }
}

/// Cell indices plus their packed payload.
pub fn uniform_quantize(x: &[f64], spec: &UniformQuantizerSpec) -> Result<(Vec<u32>, BitPayload)> {
    let idx: Vec<u32> = x.iter().map(|&v| spec.index(v)).collect();
    let payload = BitPayload::pack(spec.scheme(), &idx)?;
    Ok((idx, payload))
}

/// Cell centres `lo + (i + ½)·Δ`.
pub fn uniform_dequantize(indices: &[u32], spec: &UniformQuantizerSpec) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            if i >= spec.levels() {
                Err(Error::Validation(format!("index {i} exceeds {} levels", spec.levels())))
            } else {
                Ok(spec.value(i))
            }
        })
        .collect()
}

/// Quantize-dequantize in one pass.
pub fn uniform_round_trip(x: &[f64], spec: &UniformQuantizerSpec) -> Vec<f64> {
    x.iter().map(|&v| spec.value(spec.index(v))).collect()
}
