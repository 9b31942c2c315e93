use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::flowmat::config::{kv_enum, take};
use crate::training::losses::LossMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Estimate,
    Feedback,
    Joint,
}
kv_enum!(Task { Estimate => "estimate", Feedback => "feedback", Joint => "joint" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Denoiser first, then the decoder with the denoiser frozen.
    Progressive,
    /// Both estimation losses at once.
    Joint,
    /// Pilots to eigenvectors through one differentiable graph.
    EndToEnd,
    /// Estimation and feedback trained separately, composed at evaluation.
    Splited,
}
kv_enum!(Regime { Progressive => "progressive", Joint => "joint", EndToEnd => "end_to_end", Splited => "splited" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Cosine,
    Constant,
}
kv_enum!(Schedule { Cosine => "cosine", Constant => "constant" });

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Steps of the first (or only) phase.
    pub steps: usize,
    /// Steps of the decoder phase in progressive training.
    pub steps2: usize,
    /// Fine-tuning steps with the quantizer in the loop.
    pub quant_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// On-the-fly noise SNR range for training batches.
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// Rotate each training channel by a random global phase and, for the
    /// estimation regimes, randomly reverse its antenna orders.
    pub augment: bool,
    /// SNR of the held-out evaluation observations.
    pub eval_snr_db: f64,
    pub loss_mode: LossMode,
    /// Unrolled power steps in the end-to-end graph.
    pub power_iters: usize,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Progressive,
            steps: 1000,
            steps2: 1000,
            quant_steps: 300,
            batch_size: 16,
            lr: 1e-3,
            lr_min: 0.0,
            schedule: Schedule::Cosine,
            seed: 0,
            snr_min_db: 10.0,
            snr_max_db: 10.0,
            augment: true,
            eval_snr_db: 10.0,
            loss_mode: LossMode::Canonical,
            power_iters: 8,
            divergence_factor: 10.0,
            divergence_patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.lr_min < 0.0 || self.lr_min > self.lr {
            return bad("need 0 ≤ lr_min ≤ lr with lr > 0");
        }
        if self.snr_min_db.is_nan() || self.snr_max_db.is_nan() || self.snr_min_db > self.snr_max_db {
            return bad("need snr_min_db ≤ snr_max_db");
        }
        if self.divergence_factor <= 1.0 || self.divergence_patience == 0 {
            return bad("divergence guard needs factor > 1 and positive patience");
        }
        Ok(())
    }

    /// Learning rate at step `t` of a phase of `total` steps.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let frac = t as f64 / total.max(1) as f64;
                self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (PI * frac).cos())
            }
        }
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("augment", self.augment.to_string());
        put("batch_size", self.batch_size.to_string());
        put("divergence_factor", format!("{:?}", self.divergence_factor));
        put("divergence_patience", self.divergence_patience.to_string());
        put("eval_snr_db", format!("{:?}", self.eval_snr_db));
        put("loss_mode", self.loss_mode.to_string());
        put("lr", format!("{:?}", self.lr));
        put("lr_min", format!("{:?}", self.lr_min));
        put("power_iters", self.power_iters.to_string());
        put("quant_steps", self.quant_steps.to_string());
        put("regime", self.regime.to_string());
        put("schedule", self.schedule.to_string());
        put("seed", self.seed.to_string());
        put("snr_max_db", format!("{:?}", self.snr_max_db));
        put("snr_min_db", format!("{:?}", self.snr_min_db));
        put("steps", self.steps.to_string());
        put("steps2", self.steps2.to_string());
        m
    }

    pub fn from_kv(map: &BTreeMap<String, String>, base: &TrainConfig) -> Result<Self> {
        let c = Self {
            regime: take(map, "regime", base.regime)?,
            steps: take(map, "steps", base.steps)?,
            steps2: take(map, "steps2", base.steps2)?,
            quant_steps: take(map, "quant_steps", base.quant_steps)?,
            batch_size: take(map, "batch_size", base.batch_size)?,
            lr: take(map, "lr", base.lr)?,
            lr_min: take(map, "lr_min", base.lr_min)?,
            schedule: take(map, "schedule", base.schedule)?,
            seed: take(map, "seed", base.seed)?,
            snr_min_db: take(map, "snr_min_db", base.snr_min_db)?,
            snr_max_db: take(map, "snr_max_db", base.snr_max_db)?,
            augment: take(map, "augment", base.augment)?,
            eval_snr_db: take(map, "eval_snr_db", base.eval_snr_db)?,
            loss_mode: take(map, "loss_mode", base.loss_mode)?,
            power_iters: take(map, "power_iters", base.power_iters)?,
            divergence_factor: take(map, "divergence_factor", base.divergence_factor)?,
            divergence_patience: take(map, "divergence_patience", base.divergence_patience)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let c = TrainConfig { lr: 1e-3, lr_min: 0.0, ..Default::default() };
        assert_eq!(c.lr_at(0, 100), 1e-3);
        assert!((c.lr_at(50, 100) - 5e-4).abs() < 1e-15);
        assert!(c.lr_at(100, 100).abs() < 1e-18);
    }

    #[test]
    fn kv_round_trip() {
        let c = TrainConfig { regime: Regime::EndToEnd, snr_min_db: 0.0, snr_max_db: 20.0, ..Default::default() };
        assert_eq!(TrainConfig::from_kv(&c.to_kv(), &TrainConfig::default()).unwrap(), c);
        let mut bad = c.to_kv();
        bad.insert("regime".into(), "sideways".into());
        assert!(TrainConfig::from_kv(&bad, &TrainConfig::default()).is_err());
        bad.insert("regime".into(), "joint".into());
        bad.insert("batch_size".into(), "0".into());
        assert!(TrainConfig::from_kv(&bad, &TrainConfig::default()).is_err());
    }
}
