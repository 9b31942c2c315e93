use crate::error::{Error, Result};
use crate::flowmat::config::MaskMode;
use crate::numerics::Tensor;

/// Bias added to logits of masked keys in hard mode.
pub const HARD_MASK: f64 = -1e9;

/// Indices of the `m` largest entries, ties to the lower index, returned in
/// ascending order.
pub fn top_k_indices(query: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > query.len() {
        return Err(Error::Validation(format!("keep {m} outside [1, {}]", query.len())));
    }
    if query.iter().any(|q| q.is_nan()) {
        return Err(Error::Validation("query has NaN entries".into()));
    }
    let mut order: Vec<usize> = (0..query.len()).collect();
    order.sort_by(|&a, &b| query[b].total_cmp(&query[a]).then(a.cmp(&b)));
    let mut kept = order[..m].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// `N×N` encoder-side bias: `paper_literal` puts `1` on kept columns and `0`
/// on masked ones; hard puts `0` on kept and `−1e9` on masked.
pub fn build_mask_bias(kept: &[usize], n: usize, mode: MaskMode) -> Result<Tensor> {
    let mut col = vec![false; n];
    for &k in kept {
        if k >= n {
            return Err(Error::Validation(format!("kept index {k} out of range {n}")));
        }
        if col[k] {
            return Err(Error::Validation(format!("kept index {k} repeated")));
        }
        col[k] = true;
    }
    let (on, off) = match mode {
        MaskMode::PaperLiteral => (1.0, 0.0),
        MaskMode::Hard => (0.0, HARD_MASK),
    };
    Ok(Tensor::from_fn(&[n, n], |i| if col[i % n] { on } else { off }))
}

/// Decoder first-block bias: the encoder bias negated in `paper_literal` mode,
/// unchanged in hard mode.
pub fn build_inverse_bias(kept: &[usize], n: usize, mode: MaskMode) -> Result<Tensor> {
    let b = build_mask_bias(kept, n, mode)?;
    Ok(match mode {
        MaskMode::PaperLiteral => b.map(|v| -v),
        MaskMode::Hard => b,
    })
}

/// Kept/masked split derived from a query vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub query: Tensor,
    pub kept: Vec<usize>,
    pub masked: Vec<usize>,
    pub bias: Tensor,
}

impl MaskPlan {
    pub fn from_query(query: &Tensor, m: usize, mode: MaskMode) -> Result<Self> {
        let n = query.len();
        let kept = top_k_indices(query.data(), m)?;
        Self::from_kept(query.clone(), kept, n, mode)
    }

    pub fn from_kept(query: Tensor, kept: Vec<usize>, n: usize, mode: MaskMode) -> Result<Self> {
        let bias = build_mask_bias(&kept, n, mode)?;
        let masked = (0..n).filter(|i| kept.binary_search(i).is_err()).collect();
        Ok(Self { query, kept, masked, bias })
    }
}

/// Value-level gather of the top-`m` rows of `z` by `query`.
pub fn select_active(z: &Tensor, query: &Tensor, m: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, d) = z.dims2();
    if query.len() != n {
        return Err(Error::Shape(format!("query of {} for {n} tokens", query.len())));
    }
    let kept = top_k_indices(query.data(), m)?;
    let data = kept.iter().flat_map(|&i| z.row(i).iter().copied()).collect();
    Ok((Tensor::new(&[m, d], data)?, kept))
}

/// Value-level placement of `z_part` rows at `kept`, `token` elsewhere.
pub fn insert_mask_tokens(z_part: &Tensor, kept: &[usize], n: usize, token: &Tensor) -> Result<Tensor> {
    let (m, d) = z_part.dims2();
    if kept.len() != m || token.len() != d {
        return Err(Error::Shape(format!("{m} rows for {} kept, token width {}", kept.len(), token.len())));
    }
    if kept.windows(2).any(|w| w[0] >= w[1]) || kept.iter().any(|&k| k >= n) {
        return Err(Error::Validation(format!("kept indices {kept:?} collide or exceed {n}")));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut j = 0;
    for i in 0..n {
        if j < m && kept[j] == i {
            data.extend_from_slice(z_part.row(j));
            j += 1;
        } else {
            data.extend_from_slice(token.data());
        }
    }
    Tensor::new(&[n, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::softmax_in_place;
    use proptest::prelude::*;

    #[test]
    fn top_k_cases() {
        assert_eq!(top_k_indices(&[0.9, 0.1, 0.5, 0.7], 2).unwrap(), vec![0, 3]);
        assert_eq!(top_k_indices(&[0.5, 0.5, 0.1], 1).unwrap(), vec![0]);
        assert_eq!(top_k_indices(&[0.2, 0.9, 0.5], 3).unwrap(), vec![0, 1, 2]);
        assert!(top_k_indices(&[0.2], 2).is_err());
        assert!(top_k_indices(&[0.2], 0).is_err());
    }

    #[test]
    fn literal_bias_rows() {
        let b = build_mask_bias(&[0, 3], 4, MaskMode::PaperLiteral).unwrap();
        for r in 0..4 {
            assert_eq!(b.row(r), &[1.0, 0.0, 0.0, 1.0]);
        }
        let inv = build_inverse_bias(&[0, 3], 4, MaskMode::PaperLiteral).unwrap();
        assert_eq!(inv.row(2), &[-1.0, 0.0, 0.0, -1.0]);
        let all = build_mask_bias(&[0, 1, 2], 3, MaskMode::Hard).unwrap();
        assert!(all.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hard_bias_kills_masked_keys() {
        let b = build_mask_bias(&[0], 4, MaskMode::Hard).unwrap();
        let mut row: Vec<f64> = [0.3, 2.0, -1.0, 5.0].iter().zip(b.row(1)).map(|(s, m)| s + m).collect();
        softmax_in_place(&mut row);
        assert!(row[1..].iter().all(|&w| w < 1e-12));
        assert!((row[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn placement() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let t = Tensor::new(&[2], vec![9.0, 8.0]).unwrap();
        let y = insert_mask_tokens(&z, &[0, 3], 4, &t).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 9.0, 8.0, 9.0, 8.0, 3.0, 4.0]);
        let full = insert_mask_tokens(&z, &[0, 1], 2, &t).unwrap();
        assert_eq!(full, z);
        assert!(insert_mask_tokens(&z, &[1, 1], 4, &t).is_err());
    }

    #[test]
    fn plan_partitions() {
        let q = Tensor::new(&[5], vec![0.1, 0.9, 0.3, 0.8, 0.0]).unwrap();
        let p = MaskPlan::from_query(&q, 2, MaskMode::Hard).unwrap();
        assert_eq!(p.kept, vec![1, 3]);
        assert_eq!(p.masked, vec![0, 2, 4]);
    }

    proptest! {
        #[test]
        fn select_active_is_equivariant(perm_seed in 0u64..1000, n in 2usize..9, m_frac in 0.0f64..1.0) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
            let m = 1 + ((n - 1) as f64 * m_frac) as usize;
            // distinct values
            let mut qv: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
            qv.shuffle(&mut rng);
            let z = Tensor::from_fn(&[n, 3], |i| (i as f64).sin());
            let q = Tensor::new(&[n], qv.clone()).unwrap();
            let (_, kept) = select_active(&z, &q, m).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            // token i moves to position perm[i]
            let mut pq = vec![0.0; n];
            for i in 0..n {
                pq[perm[i]] = qv[i];
            }
            let zp = Tensor::from_fn(&[n, 3], |_| 0.0);
            let (_, kept_p) = select_active(&zp, &Tensor::new(&[n], pq).unwrap(), m).unwrap();
            let mut mapped: Vec<usize> = kept.iter().map(|&i| perm[i]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, kept_p);
        }
    }
}
