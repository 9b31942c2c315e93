use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::quantizer::payload::{BitPayload, Scheme};

/// Learned codebook of `K` vectors of width `d_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct VqCodebook {
    pub vectors: Tensor,
    pub usage: Vec<u64>,
    pub beta: f64,
}

impl VqCodebook {
    pub fn new(vectors: Tensor, beta: f64) -> Result<Self> {
        let (k, _) = vectors.dims2();
        if k < 2 || !k.is_power_of_two() {
            return Err(Error::Validation(format!("codebook size {k} is not a power of two ≥ 2")));
        }
        if vectors.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("codebook has non-finite entries".into()));
        }
        Ok(Self { vectors, usage: vec![0; k], beta })
    }

    /// Codebook seeded from randomly chosen rows of `samples` plus small jitter.
    pub fn from_samples<R: Rng + ?Sized>(k: usize, samples: &Tensor, beta: f64, rng: &mut R) -> Result<Self> {
        let (n, d) = samples.dims2();
        if n == 0 {
            return Err(Error::Validation("no samples to seed codebook".into()));
        }
        let jitter = Tensor::randn(&[k, d], 1e-3, rng);
        let mut data = Vec::with_capacity(k * d);
        for i in 0..k {
            let r = rng.random_range(0..n);
            data.extend(samples.row(r).iter().zip(jitter.row(i)).map(|(a, b)| a + b));
        }
        Self::new(Tensor::new(&[k, d], data)?, beta)
    }

    pub fn size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn scheme(&self) -> Scheme {
        Scheme::Vq { codebook_size: self.size() as u32 }
    }
}

/// Nearest codeword per row (squared distance, ties to the lower index).
pub fn vq_nearest(x: &Tensor, codebook: &Tensor) -> Result<Vec<u32>> {
    let (m, d) = x.dims2();
    let (k, dc) = codebook.dims2();
    if d != dc {
        return shape_err(format!("rows of width {d} against codewords of width {dc}"));
    }
    if k == 0 {
        return Err(Error::Validation("empty codebook".into()));
    }
    Ok((0..m)
        .map(|i| {
            let xi = x.row(i);
            let mut best = (f64::INFINITY, 0u32);
            for j in 0..k {
                let dist: f64 = xi.iter().zip(codebook.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, j as u32);
                }
            }
            best.1
        })
        .collect())
}

/// Assignment plus packed payload of `m·log₂K` bits.
pub fn vq_assign(x: &Tensor, codebook: &VqCodebook) -> Result<(Vec<u32>, BitPayload)> {
    let idx = vq_nearest(x, &codebook.vectors)?;
    let payload = BitPayload::pack(codebook.scheme(), &idx)?;
    Ok((idx, payload))
}

/// Rows of `codebook` selected by `indices`.
pub fn vq_lookup(indices: &[u32], codebook: &Tensor) -> Result<Tensor> {
    let (k, d) = codebook.dims2();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i as usize >= k {
            return Err(Error::Validation(format!("codeword {i} out of range")));
        }
        data.extend_from_slice(codebook.row(i as usize));
    }
    Tensor::new(&[indices.len(), d], data)
}

/// `(‖sg(x) − e‖², β‖x − sg(e)‖²)`, squared norms summed per row and
/// averaged over rows.
pub fn vq_losses(g: &mut Graph, x: Var, e: Var, beta: f64) -> Result<(Var, Var)> {
    if g.shape(x) != g.shape(e) {
        return shape_err("latents and codewords differ in shape");
    }
    let rows = g.value(x).rows() as f64;
    let sx = g.constant(g.value(x).clone());
    let se = g.constant(g.value(e).clone());
    let d1 = g.sub(sx, e)?;
    let sq1 = g.mul(d1, d1)?;
    let s1 = g.sum(sq1);
    let codebook = g.scale(s1, 1.0 / rows);
    let d2 = g.sub(x, se)?;
    let sq2 = g.mul(d2, d2)?;
    let s2 = g.sum(sq2);
    let commit = g.scale(s2, beta / rows);
    Ok((codebook, commit))
}
