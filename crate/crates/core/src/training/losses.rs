use crate::error::{shape_err, Error, Result};
use crate::flowmat::config::kv_enum;
use crate::numerics::{Graph, Tensor, Var};

/// Denominator of the normalized reconstruction losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// `Σ target²`.
    Canonical,
    /// `Σ prediction²`.
    PaperLiteral,
}
kv_enum!(LossMode { Canonical => "canonical", PaperLiteral => "paper_literal" });

/// `sqrt(Σ (p − t)² / D)` with `D` chosen by `mode`.
pub fn loss_ce(g: &mut Graph, pred: Var, target: &Tensor, mode: LossMode) -> Result<Var> {
    if g.shape(pred) != target.shape() {
        return shape_err(format!("loss on {:?} vs {:?}", g.shape(pred), target.shape()));
    }
    let t = g.constant(target.clone());
    let e = g.sub(pred, t)?;
    let e2 = g.mul(e, e)?;
    let num = g.sum(e2);
    let ratio = match mode {
        LossMode::Canonical => {
            let den = target.sum_squares();
            if den == 0.0 {
                return Err(Error::Validation("all-zero target".into()));
            }
            g.scale(num, 1.0 / den)
        }
        LossMode::PaperLiteral => {
            let p2 = g.mul(pred, pred)?;
            let den = g.sum(p2);
            if g.value(den).data()[0] == 0.0 {
                return Err(Error::Validation("all-zero prediction".into()));
            }
            g.div(num, den)?
        }
    };
    Ok(g.sqrt(ratio))
}

/// Pilot denoising loss.
pub fn loss_ce1(g: &mut Graph, denoised: Var, clean: &Tensor, mode: LossMode) -> Result<Var> {
    loss_ce(g, denoised, clean, mode)
}

/// Full-band estimation loss.
pub fn loss_ce2(g: &mut Graph, estimate: Var, truth: &Tensor, mode: LossMode) -> Result<Var> {
    loss_ce(g, estimate, truth, mode)
}

/// Value form of [`loss_ce`].
pub fn loss_ce_value(pred: &Tensor, target: &Tensor, mode: LossMode) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let l = loss_ce(&mut g, p, target, mode)?;
    Ok(g.value(l).data()[0])
}

fn check_rows(t: &Tensor) -> Result<()> {
    let (_, d) = t.dims2();
    if d % 2 != 0 {
        return shape_err(format!("token width {d} is not even"));
    }
    if t.data().chunks(d.max(1)).any(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::Validation("zero-norm row".into()));
    }
    Ok(())
}

/// `1 − Rho` over rows of `[re…, im…]` tokens: the mean over rows of
/// `|wᴴ w′| / (‖w‖ ‖w′‖)`, subtracted from one.
pub fn loss_cf(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    if g.shape(pred) != target.shape() {
        return shape_err(format!("loss on {:?} vs {:?}", g.shape(pred), target.shape()));
    }
    check_rows(target)?;
    let (rows, d) = target.dims2();
    let h = d / 2;
    // rows of the unit target and its quarter-turn, so that
    // Re(tᴴp) = Σ p⊙a and Im(tᴴp) = Σ p⊙b
    let mut a = target.clone();
    for r in a.data_mut().chunks_mut(d) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    let b = Tensor::from_fn(&[rows, d], |i| {
        let (r, c) = (i / d, i % d);
        if c < h {
            -a.get(r, h + c)
        } else {
            a.get(r, c - h)
        }
    });
    let p = g.row_normalize(pred)?;
    let av = g.constant(a);
    let bv = g.constant(b);
    let pa = g.mul(p, av)?;
    let re = g.row_sum(pa);
    let pb = g.mul(p, bv)?;
    let im = g.row_sum(pb);
    let re2 = g.mul(re, re)?;
    let im2 = g.mul(im, im)?;
    let mag2 = g.add(re2, im2)?;
    let mag2 = g.add_scalar(mag2, 1e-30);
    let mag = g.sqrt(mag2);
    let mean = g.mean(mag);
    let neg = g.scale(mean, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Rho between two token batches.
pub fn rho_tokens(truth: &Tensor, pred: &Tensor) -> Result<f64> {
    check_rows(pred)?;
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let l = loss_cf(&mut g, p, truth)?;
    Ok(1.0 - g.value(l).data()[0])
}
