use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelTensor, EigenMatrix, PilotObservation};
use crate::error::{shape_err, Error, Result};
use crate::flowmat::checkpoint::Checkpoint;
use crate::flowmat::config::{MaskTokenInit, ModelConfig, QuantMode, TokenReduction};
use crate::flowmat::layers::{
    add_block, add_layer_norm, add_linear, add_mixer_block, add_positions, bind, block, layer_norm, linear,
    mixer_block,
};
use crate::flowmat::mask::{build_inverse_bias, build_mask_bias, top_k_indices};
use crate::flowmat::tokens::{detokenize_channel, detokenize_eigen, tokenize_channel, tokenize_eigen};
use crate::numerics::{Graph, ParamStore, Parameter, Tensor, Var};
use crate::quantizer::{
    vq_losses, vq_lookup, vq_nearest, uniform_dequantize, BitPayload, Scheme, UniformQuantizerSpec,
};

const POS_STD: f64 = 0.02;

fn block_gain(n_blocks: usize) -> f64 {
    1.0 / (2.0 * n_blocks.max(1) as f64).sqrt()
}

fn mask_token(cfg: &ModelConfig, d: usize, rng: &mut ChaCha8Rng) -> Parameter {
    let t = match cfg.mask_token_init {
        MaskTokenInit::Zero => Tensor::zeros(&[d]),
        MaskTokenInit::Randn => Tensor::randn(&[d], 1.0, rng),
    };
    if cfg.mask_token_trainable {
        Parameter::new(t)
    } else {
        Parameter::frozen(t)
    }
}

fn init_decoder(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig, d_in: usize, share_io: bool, gain: f64) {
    let d = cfg.d_model;
    add_linear(store, rng, "dec.in", d_in, d, 1.0);
    store.insert("dec.pos", Parameter::new(Tensor::randn(&[cfg.n_tokens, d], POS_STD, rng)));
    for i in 0..cfg.dec_depth {
        add_block(store, rng, &format!("dec.blk{i}"), d, cfg.mlp_expansion, gain);
    }
    add_layer_norm(store, "dec.lnf", d);
    if share_io {
        store.insert("dec.out.b", Parameter::new(Tensor::zeros(&[cfg.d_tok])));
    } else {
        add_linear(store, rng, "dec.out", d, cfg.d_tok, 1.0);
    }
}

/// Decoder stack; the first block carries `bias`. With `shared` the output
/// map reuses that `[d_tok × d_model]` input weight transposed.
fn run_decoder(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    y: Var,
    batch: usize,
    bias: Option<&Tensor>,
    shared: Option<&str>,
) -> Result<Var> {
    let mut h = linear(g, store, "dec.in", y)?;
    h = add_positions(g, store, "dec.pos", h, batch)?;
    for i in 0..cfg.dec_depth {
        let b = if i == 0 { bias } else { None };
        h = block(g, store, &format!("dec.blk{i}"), h, b, batch, cfg.n_heads)?;
    }
    h = layer_norm(g, store, "dec.lnf", h)?;
    match shared {
        Some(name) => {
            let w = bind(g, store, name)?;
            let b = bind(g, store, "dec.out.b")?;
            let o = g.matmul_nt(h, w)?;
            g.add_row(o, b)
        }
        None => linear(g, store, "dec.out", h),
    }
}

/// Contiguous group `[N × m]` membership used by token merging.
fn merge_groups(n: usize, m: usize) -> Vec<usize> {
    (0..n).map(|i| i * m / n).collect()
}

/// Graph outputs of one feedback forward pass.
#[derive(Debug, Clone)]
pub struct FeedbackForward {
    /// Reconstructed tokens, rows unit-norm.
    pub output: Var,
    pub raw: Var,
    /// Pre-quantization latent `[B·m × d_q]`.
    pub latent: Var,
    /// VQ codebook plus commitment loss when VQ is active.
    pub aux_loss: Option<Var>,
    pub kept: Vec<usize>,
    /// Quantizer indices in transmission order, empty in float mode.
    pub indices: Vec<u32>,
}

/// Masked-token feedback autoencoder for eigen-precoder sequences.
#[derive(Debug, Clone)]
pub struct FeedbackModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl FeedbackModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let c = &config;
        let d = c.d_model;
        let gain = block_gain(c.enc_depth + c.dec_depth);
        let mut s = ParamStore::new();
        add_linear(&mut s, &mut rng, "enc.in", c.d_tok, d, 1.0);
        s.insert("enc.pos", Parameter::new(Tensor::randn(&[c.n_tokens, d], POS_STD, &mut rng)));
        for i in 0..c.enc_depth {
            add_block(&mut s, &mut rng, &format!("enc.blk{i}"), d, c.mlp_expansion, gain);
        }
        add_layer_norm(&mut s, "enc.lnf", d);
        add_linear(&mut s, &mut rng, "enc.out", d, d, 1.0);

        // evenly spaced initial selection, lightly perturbed
        let noise = Tensor::randn(&[c.n_tokens, 1], 0.01, &mut rng);
        let mut q = noise.into_data();
        for j in 0..c.keep {
            q[(2 * j + 1) * c.n_tokens / (2 * c.keep)] += 1.0;
        }
        let q = Tensor::new(&[c.n_tokens, 1], q)?;
        s.insert("query", if c.query_learnable { Parameter::new(q) } else { Parameter::frozen(q) });

        add_linear(&mut s, &mut rng, "lat.down", d, c.d_q, 1.0);
        add_linear(&mut s, &mut rng, "lat.up", c.d_q, d, 1.0);
        s.insert("mask_token", mask_token(c, d, &mut rng));
        if c.reduction == TokenReduction::Dense {
            let n = c.n_tokens;
            let m = c.keep;
            s.insert("reduce.down", Parameter::new(Tensor::randn(&[m, n], 1.0 / (n as f64).sqrt(), &mut rng)));
            s.insert("reduce.up", Parameter::new(Tensor::randn(&[n, m], 1.0 / (m as f64).sqrt(), &mut rng)));
        }
        init_decoder(&mut s, &mut rng, c, d, c.share_io, gain);
        match c.quant {
            QuantMode::Float => {}
            QuantMode::Uniform => {
                s.insert("quant.range", Parameter::frozen(Tensor::new(&[2], vec![-1.0, 1.0])?));
            }
            QuantMode::Vq => {
                s.insert("vq.codebook", Parameter::new(Tensor::randn(&[c.vq_size, c.d_q], 1.0, &mut rng)));
            }
        }
        Ok(Self { config, params: s })
    }

    /// Kept token indices (top-`m` of the query); empty for the
    /// projection-based reductions.
    pub fn kept(&self) -> Result<Vec<usize>> {
        match self.config.reduction {
            TokenReduction::Query => top_k_indices(self.params.get("query")?.value.data(), self.config.keep),
            _ => Ok(Vec::new()),
        }
    }

    fn biases(&self, kept: &[usize]) -> Result<(Option<Tensor>, Option<Tensor>)> {
        if self.config.reduction != TokenReduction::Query {
            return Ok((None, None));
        }
        let n = self.config.n_tokens;
        let mode = self.config.mask_mode;
        Ok((Some(build_mask_bias(kept, n, mode)?), Some(build_inverse_bias(kept, n, mode)?)))
    }

    fn check_input(&self, g: &Graph, x: Var, batch: usize) -> Result<()> {
        let c = &self.config;
        if batch == 0 || g.shape(x) != [batch * c.n_tokens, c.d_tok] {
            return shape_err(format!(
                "feedback input {:?}, expected {}x{}",
                g.shape(x),
                batch * c.n_tokens,
                c.d_tok
            ));
        }
        Ok(())
    }

    /// Encoder: input projection plus positions, attention blocks, the last
    /// of which adds `bias` to its logits, then the output projection.
    pub fn encode(&self, g: &mut Graph, x: Var, batch: usize, bias: Option<&Tensor>) -> Result<Var> {
        self.check_input(g, x, batch)?;
        let s = &self.params;
        let mut h = linear(g, s, "enc.in", x)?;
        h = add_positions(g, s, "enc.pos", h, batch)?;
        let depth = self.config.enc_depth;
        for i in 0..depth {
            let b = if i + 1 == depth { bias } else { None };
            h = block(g, s, &format!("enc.blk{i}"), h, b, batch, self.config.n_heads)?;
        }
        h = layer_norm(g, s, "enc.lnf", h)?;
        linear(g, s, "enc.out", h)
    }

    /// Decoder over `[B·N × d_model]` rows; returns raw tokens.
    pub fn decode(&self, g: &mut Graph, y: Var, batch: usize, bias: Option<&Tensor>) -> Result<Var> {
        let shared = self.config.share_io.then_some("enc.in.w");
        run_decoder(g, &self.params, &self.config, y, batch, bias, shared)
    }

    fn reduce(&self, g: &mut Graph, z: Var, batch: usize, kept: &[usize]) -> Result<Var> {
        let c = &self.config;
        let n = c.n_tokens;
        match c.reduction {
            TokenReduction::Query => {
                let idx: Vec<usize> = (0..batch).flat_map(|b| kept.iter().map(move |&k| b * n + k)).collect();
                let part = g.gather_rows(z, &idx)?;
                if c.query_learnable {
                    let q = bind(g, &self.params, "query")?;
                    let rep: Vec<usize> = (0..batch).flat_map(|_| kept.iter().copied()).collect();
                    let sc = g.gather_rows(q, &rep)?;
                    g.gate_rows(part, sc)
                } else {
                    Ok(part)
                }
            }
            TokenReduction::Dense => {
                let p = bind(g, &self.params, "reduce.down")?;
                g.left_matmul_batched(p, z, batch)
            }
            TokenReduction::Merge => {
                let groups = merge_groups(n, c.keep);
                let mut sizes = vec![0usize; c.keep];
                groups.iter().for_each(|&gi| sizes[gi] += 1);
                let p = Tensor::from_fn(&[c.keep, n], |i| {
                    let (r, col) = (i / n, i % n);
                    if groups[col] == r {
                        1.0 / sizes[r] as f64
                    } else {
                        0.0
                    }
                });
                let p = g.constant(p);
                g.left_matmul_batched(p, z, batch)
            }
        }
    }

    fn expand(&self, g: &mut Graph, up: Var, batch: usize, kept: &[usize]) -> Result<Var> {
        let c = &self.config;
        let n = c.n_tokens;
        match c.reduction {
            TokenReduction::Query => {
                let t = bind(g, &self.params, "mask_token")?;
                g.insert_rows(up, t, kept, n)
            }
            TokenReduction::Dense => {
                let p = bind(g, &self.params, "reduce.up")?;
                g.left_matmul_batched(p, up, batch)
            }
            TokenReduction::Merge => {
                let groups = merge_groups(n, c.keep);
                let p = Tensor::from_fn(&[n, c.keep], |i| if groups[i / c.keep] == i % c.keep { 1.0 } else { 0.0 });
                let p = g.constant(p);
                g.left_matmul_batched(p, up, batch)
            }
        }
    }

    pub fn uniform_spec(&self) -> Result<UniformQuantizerSpec> {
        let r = self.params.get("quant.range")?.value.data().to_vec();
        UniformQuantizerSpec::new(self.config.quant_bits, r[0], r[1])
    }

    pub fn set_uniform_range(&mut self, spec: &UniformQuantizerSpec) -> Result<()> {
        if spec.bits != self.config.quant_bits {
            return Err(Error::Config(format!("range for {} bits, model uses {}", spec.bits, self.config.quant_bits)));
        }
        self.params.get_mut("quant.range")?.value = Tensor::new(&[2], vec![spec.lo, spec.hi])?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<Option<Scheme>> {
        Ok(match self.config.quant {
            QuantMode::Float => None,
            QuantMode::Uniform => Some(self.uniform_spec()?.scheme()),
            QuantMode::Vq => Some(Scheme::Vq { codebook_size: self.config.vq_size as u32 }),
        })
    }

    fn quantize(&self, g: &mut Graph, lat: Var) -> Result<(Var, Vec<u32>, Option<Var>)> {
        match self.config.quant {
            QuantMode::Float => Ok((lat, Vec::new(), None)),
            QuantMode::Uniform => {
                let spec = self.uniform_spec()?;
                let v = g.value(lat);
                let idx: Vec<u32> = v.data().iter().map(|&x| spec.index(x)).collect();
                let deq = Tensor::new(v.shape(), uniform_dequantize(&idx, &spec)?)?;
                Ok((g.straight_through(lat, deq)?, idx, None))
            }
            QuantMode::Vq => {
                let cb = bind(g, &self.params, "vq.codebook")?;
                let idx = vq_nearest(g.value(lat), g.value(cb))?;
                let rows: Vec<usize> = idx.iter().map(|&i| i as usize).collect();
                let e = g.gather_rows(cb, &rows)?;
                let (l1, l2) = vq_losses(g, lat, e, self.config.vq_beta)?;
                let aux = g.add(l1, l2)?;
                let ev = g.value(e).clone();
                Ok((g.straight_through(lat, ev)?, idx, Some(aux)))
            }
        }
    }

    /// Latent-to-tokens half: expansion, mask tokens, decoder, renormalize.
    fn decode_latent(&self, g: &mut Graph, lat_q: Var, batch: usize, kept: &[usize]) -> Result<(Var, Var)> {
        let (_, inv) = self.biases(kept)?;
        let up = linear(g, &self.params, "lat.up", lat_q)?;
        let y3 = self.expand(g, up, batch, kept)?;
        let raw = self.decode(g, y3, batch, inv.as_ref())?;
        Ok((g.row_normalize(raw)?, raw))
    }

    /// Full feedback pass on `[B·N × d_tok]` eigen tokens. With `quantize`
    /// false the latent bypasses the quantizer.
    pub fn forward(&self, g: &mut Graph, x: Var, batch: usize, quantize: bool) -> Result<FeedbackForward> {
        let kept = self.kept()?;
        let (enc_bias, _) = self.biases(&kept)?;
        let z = self.encode(g, x, batch, enc_bias.as_ref())?;
        let part = self.reduce(g, z, batch, &kept)?;
        let latent = linear(g, &self.params, "lat.down", part)?;
        let (lat_q, indices, aux_loss) = if quantize { self.quantize(g, latent)? } else { (latent, Vec::new(), None) };
        let (output, raw) = self.decode_latent(g, lat_q, batch, &kept)?;
        Ok(FeedbackForward { output, raw, latent, aux_loss, kept, indices })
    }

    /// The same network with every masking step removed; coincides with
    /// [`FeedbackModel::forward`] bit for bit when `m = N` in hard mode.
    pub fn forward_unmasked(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let z = self.encode(g, x, batch, None)?;
        let latent = linear(g, &self.params, "lat.down", z)?;
        let up = linear(g, &self.params, "lat.up", latent)?;
        let raw = self.decode(g, up, batch, None)?;
        g.row_normalize(raw)
    }

    /// Pre-quantization latents for a token batch (quantizer calibration).
    pub fn latents(&self, tokens: &Tensor, batch: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(tokens.clone());
        let f = self.forward(&mut g, x, batch, false)?;
        Ok(g.value(f.latent).clone())
    }

    /// UE side and BS side in one call: the payload (absent in float mode)
    /// and the unit-norm reconstruction.
    pub fn feedback(&self, w: &EigenMatrix) -> Result<(Option<BitPayload>, EigenMatrix)> {
        let c = &self.config;
        if w.n_subband != c.n_tokens || 2 * w.n_tx != c.d_tok {
            return shape_err(format!("eigen matrix {}x{} for model {}x{}", w.n_subband, w.n_tx, c.n_tokens, c.d_tok));
        }
        let mut g = Graph::new();
        let x = g.constant(tokenize_eigen(w).tokens);
        let quant = c.quant != QuantMode::Float;
        let f = self.forward(&mut g, x, 1, quant)?;
        let payload = match self.scheme()? {
            Some(s) => Some(BitPayload::pack(s, &f.indices)?),
            None => None,
        };
        Ok((payload, detokenize_eigen(g.value(f.output), w.n_tx)?))
    }

    /// BS side only: rebuilds the precoders from a payload using the model's
    /// stored kept indices.
    pub fn reconstruct(&self, payload: &BitPayload) -> Result<EigenMatrix> {
        let c = &self.config;
        let expected = self.scheme()?.ok_or_else(|| Error::Config("float model has no payload".into()))?;
        if payload.scheme != expected {
            return Err(Error::Validation("payload scheme does not match model".into()));
        }
        let idx = payload.unpack()?;
        let rows = c.keep;
        let lat = match c.quant {
            QuantMode::Uniform => {
                if idx.len() != rows * c.d_q {
                    return shape_err("payload length does not match model");
                }
                Tensor::new(&[rows, c.d_q], uniform_dequantize(&idx, &self.uniform_spec()?)?)?
            }
            _ => {
                if idx.len() != rows {
                    return shape_err("payload length does not match model");
                }
                vq_lookup(&idx, &self.params.get("vq.codebook")?.value)?
            }
        };
        let mut g = Graph::new();
        let l = g.constant(lat);
        let (out, _) = self.decode_latent(&mut g, l, 1, &self.kept()?)?;
        detokenize_eigen(g.value(out), c.d_tok / 2)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = self.config.to_kv();
        meta.insert("model".into(), "feedback".into());
        Ok(Checkpoint { meta, params: self.params.clone(), kept: self.kept()? })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get("model").map(String::as_str) != Some("feedback") {
            return Err(Error::Format("checkpoint is not a feedback model".into()));
        }
        let config = ModelConfig::from_kv(&ck.meta, &ModelConfig::default())?;
        let mut m = Self::new(config)?;
        m.params.replace_from(&ck.params)?;
        if m.kept()? != ck.kept {
            return Err(Error::Format("stored kept indices disagree with the query".into()));
        }
        Ok(m)
    }

    /// Copy of the model with a different quantizer; shared weights are
    /// carried over and the quantizer's own parameters start fresh.
    pub fn with_quantizer(&self, quant: QuantMode, bits: u8, vq_size: usize) -> Result<Self> {
        let config = ModelConfig { quant, quant_bits: bits, vq_size, ..self.config.clone() };
        let mut m = Self::new(config)?;
        for (name, p) in m.params.iter_mut() {
            if let Ok(old) = self.params.get(name) {
                if old.value.shape() == p.value.shape() {
                    p.value = old.value.clone();
                }
            }
        }
        Ok(m)
    }
}

/// Graph outputs of one estimation forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EstimationForward {
    /// Denoised pilot tokens `[B·N_p × d_tok]`.
    pub denoised: Var,
    /// Full-band tokens `[B·N_c × d_tok]`.
    pub full: Var,
}

/// Pilot denoiser plus masked-token decoder for channel estimation.
#[derive(Debug, Clone)]
pub struct EstimationModel {
    pub config: ModelConfig,
    pub n_rx: usize,
    pub n_tx: usize,
    pub pilots: Vec<usize>,
    pub params: ParamStore,
}

impl EstimationModel {
    /// `config.n_tokens`, `d_tok` and `keep` are overwritten from the geometry.
    pub fn new(mut config: ModelConfig, n_rx: usize, n_tx: usize, n_sub: usize, pilots: Vec<usize>) -> Result<Self> {
        if pilots.is_empty() || pilots.windows(2).any(|w| w[0] >= w[1]) || pilots.iter().any(|&p| p >= n_sub) {
            return Err(Error::Validation("pilot indices must be sorted, unique and in range".into()));
        }
        config.n_tokens = n_sub;
        config.d_tok = 2 * n_rx * n_tx;
        config.keep = pilots.len();
        config.quant = QuantMode::Float;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let c = &config;
        let d = c.d_model;
        let np = pilots.len();
        let mut s = ParamStore::new();
        add_linear(&mut s, &mut rng, "den.in", c.d_tok, d, 1.0);
        for i in 0..c.mixer_blocks {
            add_mixer_block(&mut s, &mut rng, &format!("den.blk{i}"), np, d, c.mixer_expansion);
        }
        add_layer_norm(&mut s, "den.lnf", d);
        s.insert("den.out.w", Parameter::new(Tensor::zeros(&[d, c.d_tok])));
        s.insert("den.out.b", Parameter::new(Tensor::zeros(&[c.d_tok])));
        s.insert("mask_token", mask_token(c, c.d_tok, &mut rng));
        init_decoder(&mut s, &mut rng, c, c.d_tok, c.share_io, block_gain(c.dec_depth));
        if c.interp_skip && !c.share_io {
            s.get_mut("dec.out.w")?.value = Tensor::zeros(&[d, c.d_tok]);
        }
        Ok(Self { config, n_rx, n_tx, pilots, params: s })
    }

    /// Mixer denoiser; the zero-initialised output map makes it the identity
    /// at initialisation.
    pub fn denoise(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let c = &self.config;
        if batch == 0 || g.shape(x) != [batch * self.pilots.len(), c.d_tok] {
            return shape_err(format!("pilot tokens {:?} for {} pilots", g.shape(x), self.pilots.len()));
        }
        let s = &self.params;
        let mut h = linear(g, s, "den.in", x)?;
        for i in 0..c.mixer_blocks {
            h = mixer_block(g, s, &format!("den.blk{i}"), h, batch)?;
        }
        h = layer_norm(g, s, "den.lnf", h)?;
        let o = linear(g, s, "den.out", h)?;
        g.add(x, o)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, batch: usize) -> Result<EstimationForward> {
        let denoised = self.denoise(g, x, batch)?;
        let full = self.complete(g, denoised, batch)?;
        Ok(EstimationForward { denoised, full })
    }

    /// Places pilot tokens at their subcarriers, mask tokens elsewhere, and
    /// decodes the full band.
    pub fn complete(&self, g: &mut Graph, pilot_tokens: Var, batch: usize) -> Result<Var> {
        let c = &self.config;
        let t = bind(g, &self.params, "mask_token")?;
        let y3 = g.insert_rows(pilot_tokens, t, &self.pilots, c.n_tokens)?;
        let inv = build_inverse_bias(&self.pilots, c.n_tokens, c.mask_mode)?;
        let shared = c.share_io.then_some("den.in.w");
        let out = run_decoder(g, &self.params, c, y3, batch, Some(&inv), shared)?;
        if !c.interp_skip {
            return Ok(out);
        }
        let p = g.constant(interp_matrix(&self.pilots, c.n_tokens));
        let base = g.left_matmul_batched(p, pilot_tokens, batch)?;
        g.add(out, base)
    }

    /// Pilot tokens (the LS estimate under unit pilot symbols).
    pub fn pilot_tokens(&self, obs: &PilotObservation) -> Result<Tensor> {
        if obs.pilot_indices != self.pilots || obs.n_rx != self.n_rx || obs.n_tx != self.n_tx {
            return Err(Error::Validation("observation does not match the model's pilot layout".into()));
        }
        let ls = crate::channel::ls_estimate(obs)?;
        Ok(tokenize_channel(&ls).tokens)
    }

    pub fn estimate(&self, obs: &PilotObservation) -> Result<ChannelTensor> {
        let mut g = Graph::new();
        let x = g.constant(self.pilot_tokens(obs)?);
        let f = self.forward(&mut g, x, 1)?;
        detokenize_channel(g.value(f.full), self.n_rx, self.n_tx)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = self.config.to_kv();
        meta.insert("model".into(), "estimation".into());
        meta.insert("n_rx".into(), self.n_rx.to_string());
        meta.insert("n_tx".into(), self.n_tx.to_string());
        Checkpoint { meta, params: self.params.clone(), kept: self.pilots.clone() }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get("model").map(String::as_str) != Some("estimation") {
            return Err(Error::Format("checkpoint is not an estimation model".into()));
        }
        let config = ModelConfig::from_kv(&ck.meta, &ModelConfig::default())?;
        let get = |k: &str| -> Result<usize> {
            ck.meta
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")))
        };
        let mut m = Self::new(config.clone(), get("n_rx")?, get("n_tx")?, config.n_tokens, ck.kept.clone())?;
        m.params.replace_from(&ck.params)?;
        Ok(m)
    }
}

/// `[n × pilots]` linear interpolation across token index, holding the
/// outermost pilots beyond the pilot span.
fn interp_matrix(pilots: &[usize], n: usize) -> Tensor {
    let np = pilots.len();
    let mut m = Tensor::zeros(&[n, np]);
    let data = m.data_mut();
    let last = np - 1;
    for k in 0..n {
        if k <= pilots[0] {
            data[k * np] = 1.0;
        } else if k >= pilots[last] {
            data[k * np + last] = 1.0;
        } else {
            let j = pilots.partition_point(|&p| p <= k) - 1;
            let w = (k - pilots[j]) as f64 / (pilots[j + 1] - pilots[j]) as f64;
            data[k * np + j] = 1.0 - w;
            data[k * np + j + 1] = w;
        }
    }
    m
}

/// Metadata keys consumed by the checkpoint loaders.
pub fn checkpoint_kind(meta: &BTreeMap<String, String>) -> Option<&str> {
    meta.get("model").map(String::as_str)
}
