use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};
use crate::numerics::ComplexMatrix;

/// Frequency-domain channel indexed `[rx, subcarrier, tx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub n_rx: usize,
    pub n_sub: usize,
    pub n_tx: usize,
    pub data: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn new(n_rx: usize, n_sub: usize, n_tx: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_rx * n_sub * n_tx {
            return shape_err(format!("channel {n_rx}x{n_sub}x{n_tx} with {} entries", data.len()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("channel has non-finite entries".into()));
        }
        Ok(Self { n_rx, n_sub, n_tx, data })
    }

    pub fn zeros(n_rx: usize, n_sub: usize, n_tx: usize) -> Self {
        Self { n_rx, n_sub, n_tx, data: vec![Complex64::new(0.0, 0.0); n_rx * n_sub * n_tx] }
    }

    #[inline]
    pub fn idx(&self, r: usize, k: usize, t: usize) -> usize {
        (r * self.n_sub + k) * self.n_tx + t
    }

    #[inline]
    pub fn get(&self, r: usize, k: usize, t: usize) -> Complex64 {
        self.data[self.idx(r, k, t)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, k: usize, t: usize, z: Complex64) {
        let i = self.idx(r, k, t);
        self.data[i] = z;
    }

    /// `n_rx × n_tx` matrix of subcarrier `k`.
    pub fn subcarrier(&self, k: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.n_rx, self.n_tx, |r, t| self.get(r, k, t))
    }

    /// Spatial vector of subcarrier `k`, flattened `rx`-major.
    pub fn spatial_vector(&self, k: usize) -> Vec<Complex64> {
        (0..self.n_rx)
            .flat_map(|r| (0..self.n_tx).map(move |t| (r, t)))
            .map(|(r, t)| self.get(r, k, t))
            .collect()
    }

    /// Keeps only the listed subcarriers, in the given order.
    pub fn select_subcarriers(&self, indices: &[usize]) -> Result<ChannelTensor> {
        if let Some(bad) = indices.iter().find(|&&k| k >= self.n_sub) {
            return Err(Error::Validation(format!("subcarrier {bad} out of range")));
        }
        let mut out = ChannelTensor::zeros(self.n_rx, indices.len(), self.n_tx);
        for r in 0..self.n_rx {
            for (j, &k) in indices.iter().enumerate() {
                for t in 0..self.n_tx {
                    out.set(r, j, t, self.get(r, k, t));
                }
            }
        }
        Ok(out)
    }

    pub fn power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&mut self, z: Complex64) {
        self.data.iter_mut().for_each(|v| *v *= z);
    }

    /// Values reordered to `[rx, tx, subcarrier]`.
    pub fn to_export_order(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.n_rx {
            for t in 0..self.n_tx {
                for k in 0..self.n_sub {
                    out.push(self.get(r, k, t));
                }
            }
        }
        out
    }

    pub fn from_export_order(n_rx: usize, n_tx: usize, n_sub: usize, values: &[Complex64]) -> Result<Self> {
        if values.len() != n_rx * n_tx * n_sub {
            return shape_err("export-order channel length");
        }
        let mut out = ChannelTensor::zeros(n_rx, n_sub, n_tx);
        let mut it = values.iter();
        for r in 0..n_rx {
            for t in 0..n_tx {
                for k in 0..n_sub {
                    out.set(r, k, t, *it.next().unwrap());
                }
            }
        }
        Ok(out)
    }
}

/// Per-subband unit-norm eigen-precoders indexed `[subband, tx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenMatrix {
    pub n_subband: usize,
    pub n_tx: usize,
    pub data: Vec<Complex64>,
}

impl EigenMatrix {
    pub fn new(n_subband: usize, n_tx: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_subband * n_tx {
            return shape_err(format!("eigen matrix {n_subband}x{n_tx} with {} entries", data.len()));
        }
        Ok(Self { n_subband, n_tx, data })
    }

    /// Like [`EigenMatrix::new`] but enforces unit-norm rows (within 1e-9).
    pub fn new_unit(n_subband: usize, n_tx: usize, data: Vec<Complex64>) -> Result<Self> {
        let m = Self::new(n_subband, n_tx, data)?;
        for s in 0..n_subband {
            let n = crate::numerics::complex::vec_norm(m.row(s));
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("eigen row {s} has norm {n}")));
            }
        }
        Ok(m)
    }

    pub fn row(&self, s: usize) -> &[Complex64] {
        &self.data[s * self.n_tx..(s + 1) * self.n_tx]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [Complex64] {
        &mut self.data[s * self.n_tx..(s + 1) * self.n_tx]
    }

    /// Scales every nonzero row to unit norm.
    pub fn normalize_rows(&mut self) {
        for s in 0..self.n_subband {
            let row = self.row_mut(s);
            let n = crate::numerics::complex::vec_norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|z| *z /= n);
            }
        }
    }

    /// Values transposed to `[tx, subband]`.
    pub fn to_export_order(&self) -> Vec<Complex64> {
        (0..self.n_tx)
            .flat_map(|t| (0..self.n_subband).map(move |s| (s, t)))
            .map(|(s, t)| self.data[s * self.n_tx + t])
            .collect()
    }

    pub fn from_export_order(n_tx: usize, n_subband: usize, values: &[Complex64]) -> Result<Self> {
        if values.len() != n_tx * n_subband {
            return shape_err("export-order eigen length");
        }
        let mut data = vec![Complex64::new(0.0, 0.0); values.len()];
        for t in 0..n_tx {
            for s in 0..n_subband {
                data[s * n_tx + t] = values[t * n_subband + s];
            }
        }
        Self::new(n_subband, n_tx, data)
    }
}

/// Received pilot tones indexed `[rx, pilot, tx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub n_rx: usize,
    pub n_tx: usize,
    pub pilot_indices: Vec<usize>,
    /// Known transmitted symbol on each pilot tone.
    pub symbols: Vec<Complex64>,
    pub data: Vec<Complex64>,
    pub snr_db: f64,
    pub seed: u64,
}

impl PilotObservation {
    pub fn n_pilots(&self) -> usize {
        self.pilot_indices.len()
    }

    #[inline]
    pub fn get(&self, r: usize, p: usize, t: usize) -> Complex64 {
        self.data[(r * self.n_pilots() + p) * self.n_tx + t]
    }

    /// The observation viewed as a pilot-indexed channel (no division).
    pub fn as_channel(&self) -> ChannelTensor {
        ChannelTensor {
            n_rx: self.n_rx,
            n_sub: self.n_pilots(),
            n_tx: self.n_tx,
            data: self.data.clone(),
        }
    }
}
