use num_complex::Complex64;

use crate::channel::{ChannelTensor, EigenMatrix};
use crate::error::{shape_err, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenOrigin {
    Channel,
    Eigen,
    Latent,
}

/// One real token per frequency unit: `[re parts…, im parts…]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub origin: TokenOrigin,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }
}

fn split(z: impl Iterator<Item = Complex64> + Clone, width: usize, out: &mut Vec<f64>) {
    let start = out.len();
    out.extend(z.clone().map(|c| c.re));
    out.extend(z.map(|c| c.im));
    debug_assert_eq!(out.len() - start, 2 * width);
}

/// Subband tokens of width `2·n_tx`.
pub fn tokenize_eigen(w: &EigenMatrix) -> TokenSequence {
    let mut data = Vec::with_capacity(w.data.len() * 2);
    for s in 0..w.n_subband {
        split(w.row(s).iter().copied(), w.n_tx, &mut data);
    }
    TokenSequence { tokens: Tensor::new(&[w.n_subband, 2 * w.n_tx], data).expect("token shape"), origin: TokenOrigin::Eigen }
}

pub fn detokenize_eigen(tokens: &Tensor, n_tx: usize) -> Result<EigenMatrix> {
    let (n, d) = tokens.dims2();
    if d != 2 * n_tx {
        return shape_err(format!("token width {d} for {n_tx} antennas"));
    }
    let data = (0..n)
        .flat_map(|s| {
            let row = tokens.row(s);
            (0..n_tx).map(move |t| Complex64::new(row[t], row[n_tx + t]))
        })
        .collect();
    EigenMatrix::new(n, n_tx, data)
}

/// Subcarrier tokens of width `2·n_rx·n_tx` (spatial vector flattened `rx`-major).
pub fn tokenize_channel(h: &ChannelTensor) -> TokenSequence {
    let w = h.n_rx * h.n_tx;
    let mut data = Vec::with_capacity(h.data.len() * 2);
    for k in 0..h.n_sub {
        let v = h.spatial_vector(k);
        split(v.into_iter(), w, &mut data);
    }
    TokenSequence { tokens: Tensor::new(&[h.n_sub, 2 * w], data).expect("token shape"), origin: TokenOrigin::Channel }
}

pub fn detokenize_channel(tokens: &Tensor, n_rx: usize, n_tx: usize) -> Result<ChannelTensor> {
    let (n, d) = tokens.dims2();
    let w = n_rx * n_tx;
    if d != 2 * w {
        return shape_err(format!("token width {d} for {n_rx}x{n_tx} antennas"));
    }
    let mut h = ChannelTensor::zeros(n_rx, n, n_tx);
    for k in 0..n {
        let row = tokens.row(k);
        for r in 0..n_rx {
            for t in 0..n_tx {
                let i = r * n_tx + t;
                h.set(r, k, t, Complex64::new(row[i], row[w + i]));
            }
        }
    }
    Ok(h)
}

/// Stacks equally shaped sequences into one `[B·N × d]` batch.
pub fn stack(seqs: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = seqs.first() else {
        return shape_err("empty batch");
    };
    let (n, d) = first.dims2();
    let mut data = Vec::with_capacity(seqs.len() * n * d);
    for s in seqs {
        if s.dims2() != (n, d) {
            return shape_err("batch members differ in shape");
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(&[seqs.len() * n, d], data)
}

/// Splits a `[B·N × d]` batch back into `B` sequences.
pub fn unstack(batch: &Tensor, n: usize) -> Result<Vec<Tensor>> {
    let (rows, d) = batch.dims2();
    if n == 0 || rows % n != 0 {
        return shape_err(format!("{rows} rows into sequences of {n}"));
    }
    Ok(batch
        .data()
        .chunks(n * d)
        .map(|c| Tensor::new(&[n, d], c.to_vec()).expect("chunk shape"))
        .collect())
}
