use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Parameter, Tensor, Var};

pub(crate) fn bind(g: &mut Graph, store: &ParamStore, name: &str) -> Result<Var> {
    Ok(g.param(name, store.get(name)?))
}

pub(crate) fn add_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    d_in: usize,
    d_out: usize,
    gain: f64,
) {
    let std = gain / (d_in as f64).sqrt();
    store.insert(format!("{name}.w"), Parameter::new(Tensor::randn(&[d_in, d_out], std, rng)));
    store.insert(format!("{name}.b"), Parameter::new(Tensor::zeros(&[d_out])));
}

pub(crate) fn add_layer_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(format!("{name}.g"), Parameter::new(Tensor::full(&[d], 1.0)));
    store.insert(format!("{name}.b"), Parameter::new(Tensor::zeros(&[d])));
}

/// Pre-norm attention block with a GELU MLP.
pub(crate) fn add_block<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    d: usize,
    expansion: usize,
    out_gain: f64,
) {
    add_layer_norm(store, &format!("{prefix}.ln1"), d);
    for w in ["wq", "wk", "wv"] {
        add_linear(store, rng, &format!("{prefix}.{w}"), d, d, 1.0);
    }
    add_linear(store, rng, &format!("{prefix}.wo"), d, d, out_gain);
    add_layer_norm(store, &format!("{prefix}.ln2"), d);
    add_linear(store, rng, &format!("{prefix}.fc1"), d, expansion * d, 1.0);
    add_linear(store, rng, &format!("{prefix}.fc2"), expansion * d, d, out_gain);
}

/// Token-mixing then channel-mixing MLPs, both residual.
pub(crate) fn add_mixer_block<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    n_tok: usize,
    d: usize,
    expansion: usize,
) {
    add_layer_norm(store, &format!("{prefix}.ln1"), d);
    add_linear(store, rng, &format!("{prefix}.tok1"), n_tok, expansion * n_tok, 1.0);
    add_linear(store, rng, &format!("{prefix}.tok2"), expansion * n_tok, n_tok, 0.5);
    add_layer_norm(store, &format!("{prefix}.ln2"), d);
    add_linear(store, rng, &format!("{prefix}.ch1"), d, expansion * d, 1.0);
    add_linear(store, rng, &format!("{prefix}.ch2"), expansion * d, d, 0.5);
}

pub(crate) fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = bind(g, store, &format!("{name}.w"))?;
    let b = bind(g, store, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub(crate) fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let gain = bind(g, store, &format!("{name}.g"))?;
    let b = bind(g, store, &format!("{name}.b"))?;
    g.layer_norm(x, gain, b)
}

/// Attention block; `bias` turns it into a mask-attention block.
pub(crate) fn block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    bias: Option<&Tensor>,
    batch: usize,
    heads: usize,
) -> Result<Var> {
    let h = layer_norm(g, store, &format!("{prefix}.ln1"), x)?;
    let q = linear(g, store, &format!("{prefix}.wq"), h)?;
    let k = linear(g, store, &format!("{prefix}.wk"), h)?;
    let v = linear(g, store, &format!("{prefix}.wv"), h)?;
    let a = g.attention(q, k, v, bias, batch, heads)?;
    let o = linear(g, store, &format!("{prefix}.wo"), a)?;
    let x = g.add(x, o)?;
    let h = layer_norm(g, store, &format!("{prefix}.ln2"), x)?;
    let u = linear(g, store, &format!("{prefix}.fc1"), h)?;
    let u = g.gelu(u);
    let u = linear(g, store, &format!("{prefix}.fc2"), u)?;
    g.add(x, u)
}

pub(crate) fn mixer_block(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, batch: usize) -> Result<Var> {
    let h = layer_norm(g, store, &format!("{prefix}.ln1"), x)?;
    let ht = g.batch_transpose(h, batch)?;
    let u = linear(g, store, &format!("{prefix}.tok1"), ht)?;
    let u = g.gelu(u);
    let u = linear(g, store, &format!("{prefix}.tok2"), u)?;
    let u = g.batch_transpose(u, batch)?;
    let x = g.add(x, u)?;
    let h = layer_norm(g, store, &format!("{prefix}.ln2"), x)?;
    let u = linear(g, store, &format!("{prefix}.ch1"), h)?;
    let u = g.gelu(u);
    let u = linear(g, store, &format!("{prefix}.ch2"), u)?;
    g.add(x, u)
}

/// Adds a learned `[n × d]` table to each of `batch` stacked sequences.
pub(crate) fn add_positions(g: &mut Graph, store: &ParamStore, name: &str, x: Var, batch: usize) -> Result<Var> {
    let pos = bind(g, store, name)?;
    let n = g.value(pos).rows();
    let idx: Vec<usize> = (0..batch).flat_map(|_| 0..n).collect();
    let tiled = g.gather_rows(pos, &idx)?;
    g.add(x, tiled)
}
