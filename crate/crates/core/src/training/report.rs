use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub phase: String,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    /// Held-out metrics, e.g. `nmse_db`, `rho`.
    pub metrics: BTreeMap<String, f64>,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    /// Not part of the emitted files, which stay byte-identical across reruns.
    pub wall_time_s: f64,
}

impl TrainReport {
    /// `step,phase,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,phase,loss\n");
        for p in &self.curve {
            let _ = writeln!(s, "{},{},{}", p.step, p.phase, p.loss);
        }
        s
    }

    /// Seed, held-out metrics and the configuration echo as `key=value` lines.
    pub fn summary(&self) -> String {
        let mut s = format!("seed={}\nsteps={}\n", self.seed, self.curve.len());
        if let Some(last) = self.curve.last() {
            let _ = writeln!(s, "final_loss={}", last.loss);
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "metric.{k}={v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }

    /// Losses of one phase in step order.
    pub fn phase_losses(&self, phase: &str) -> Vec<f64> {
        self.curve.iter().filter(|p| p.phase == phase).map(|p| p.loss).collect()
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Medians of the first and last tenth of `losses` (at least one point each).
pub fn head_tail_medians(losses: &[f64]) -> Option<(f64, f64)> {
    if losses.is_empty() {
        return None;
    }
    let k = (losses.len() / 10).max(1);
    let mut head = losses[..k].to_vec();
    let mut tail = losses[losses.len() - k..].to_vec();
    Some((median(&mut head), median(&mut tail)))
}
