//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

fn check_step(h: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Validation(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Shape(format!("objective must be scalar, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Max over coordinates of `|analytic − central| / max(1, |central|)` for the
/// gradient of the scalar `f` at `x`.
pub fn finite_diff_grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_step(h)?;
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let y = f(&mut g, xv)?;
    scalar(&g, y)?;
    let grads = g.backward(y)?;
    let analytic = grads.get(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(t, false);
        let y = f(&mut g, v)?;
        scalar(&g, y)
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same check over every scalar of every trainable parameter in `store`.
/// `f` must bind parameters from the store it is given.
pub fn param_grad_check<F>(store: &ParamStore, f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_step(h)?;
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    scalar(&g, y)?;
    let grads = g.backward(y)?;
    let mut work = store.clone();
    work.collect_grads(&g, &grads);

    let mut worst = 0.0f64;
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.requires_grad)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let analytic = work
            .get(&name)?
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(store.get(&name).unwrap().value.shape()));
        for i in 0..analytic.len() {
            let mut probe = |delta: f64| -> Result<f64> {
                let p = work.get_mut(&name)?;
                let orig = p.value.data()[i];
                p.value.data_mut()[i] = orig + delta;
                let mut g = Graph::new();
                let y = f(&mut g, &work);
                work.get_mut(&name)?.value.data_mut()[i] = orig;
                scalar(&g, y?)
            };
            let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::new(&[3], vec![0.3, -1.0, 2.5]).unwrap();
        let err = finite_diff_grad_check(|g, x| Ok(g.sum(x)), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn squared_norm() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let f = |g: &mut Graph, x: Var| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        };
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let y = f(&mut g, xv).unwrap();
        let grad = g.backward(y).unwrap().get(xv).unwrap();
        assert_eq!(grad.data(), &[2.0, 4.0]);
        assert!(finite_diff_grad_check(f, &x, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn non_scalar_rejected() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        assert!(finite_diff_grad_check(|_, x| Ok(x), &x, 1e-5).is_err());
    }

    #[test]
    fn step_range_enforced() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        assert!(finite_diff_grad_check(|g, x| Ok(g.sum(x)), &x, 0.1).is_err());
    }
}
