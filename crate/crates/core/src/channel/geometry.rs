use crate::error::{Error, Result};

/// Resource blocks carrying pilots in the low-density pattern.
pub const LOW_DENSITY_RBS: [usize; 6] = [7, 15, 23, 31, 39, 47];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotKind {
    HighDensity,
    LowDensity,
    Custom,
}

/// Sorted, unique pilot subcarrier indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotPattern {
    pub kind: PilotKind,
    pub indices: Vec<usize>,
}

impl PilotPattern {
    /// Every odd resource block (0-based) carries `rb_size` pilot subcarriers.
    pub fn high_density(n_rb: usize, rb_size: usize) -> Result<Self> {
        let indices = (1..n_rb).step_by(2).flat_map(|rb| rb * rb_size..(rb + 1) * rb_size).collect();
        Self::build(PilotKind::HighDensity, indices)
    }

    /// Resource blocks 7, 15, 23, 31, 39, 47 carry `rb_size` pilot
    /// subcarriers each.
    pub fn low_density(n_rb: usize, rb_size: usize) -> Result<Self> {
        if n_rb <= *LOW_DENSITY_RBS.last().unwrap() {
            return Err(Error::Validation(format!(
                "low-density pilots need at least 48 resource blocks, got {n_rb}"
            )));
        }
        let indices = LOW_DENSITY_RBS
            .iter()
            .flat_map(|&rb| rb * rb_size..(rb + 1) * rb_size)
            .collect();
        Self::build(PilotKind::LowDensity, indices)
    }

    pub fn custom(indices: Vec<usize>) -> Result<Self> {
        Self::build(PilotKind::Custom, indices)
    }

    /// `offset, offset + stride, …` below `n_sub`.
    pub fn every(n_sub: usize, stride: usize, offset: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Validation("pilot stride must be positive".into()));
        }
        Self::custom((offset..n_sub).step_by(stride).collect())
    }

    fn build(kind: PilotKind, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("pilot pattern is empty".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("pilot indices must be strictly increasing".into()));
        }
        Ok(Self { kind, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Antenna, subcarrier and subband layout shared by every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemGeometry {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_sub: usize,
    pub n_subband: usize,
    pub pilots: PilotPattern,
    /// Hz
    pub subcarrier_spacing: f64,
}

impl SystemGeometry {
    pub fn new(
        n_tx: usize,
        n_rx: usize,
        n_sub: usize,
        n_subband: usize,
        pilots: PilotPattern,
        subcarrier_spacing: f64,
    ) -> Result<Self> {
        let g = Self { n_tx, n_rx, n_sub, n_subband, pilots, subcarrier_spacing };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 || self.n_sub == 0 || self.n_subband == 0 {
            return Err(Error::Validation("geometry sizes must be at least 1".into()));
        }
        if self.n_sub % self.n_subband != 0 {
            return Err(Error::Validation(format!(
                "{} subbands do not divide {} subcarriers",
                self.n_subband, self.n_sub
            )));
        }
        if self.pilots.indices.iter().any(|&i| i >= self.n_sub) {
            return Err(Error::Validation("pilot index beyond the last subcarrier".into()));
        }
        if !(self.subcarrier_spacing > 0.0) {
            return Err(Error::Validation("subcarrier spacing must be positive".into()));
        }
        Ok(())
    }

    pub fn subband_width(&self) -> usize {
        self.n_sub / self.n_subband
    }

    pub fn n_pilots(&self) -> usize {
        self.pilots.len()
    }
}

/// Knobs of the geometric multipath generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathProfile {
    pub n_paths: usize,
    /// seconds
    pub delay_spread: f64,
    /// radians, width of the per-path angle spread around the cluster centre
    pub angle_spread: f64,
    pub seed: u64,
}

impl MultipathProfile {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Validation("at least one path is required".into()));
        }
        if !(self.delay_spread > 0.0) {
            return Err(Error::Validation("delay spread must be positive".into()));
        }
        if !(self.angle_spread >= 0.0) {
            return Err(Error::Validation("angle spread must be nonnegative".into()));
        }
        Ok(())
    }
}
