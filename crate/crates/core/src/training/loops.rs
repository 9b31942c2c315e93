use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    interpolate_frequency, ls_estimate, observe_pilots, ChannelTensor, EigenMatrix, SystemGeometry,
};
use crate::channel::precoder::subband_gram;
use crate::error::{Error, Result};
use crate::evalharness::metrics::{nmse_db_batch, rho};
use crate::flowmat::{stack, tokenize_channel, tokenize_eigen, EstimationModel, FeedbackModel, QuantMode};
use crate::numerics::{adam_step, hermitian_top_eigpair, AdamState, ComplexMatrix, Graph, Gradients, ParamStore, Tensor};
use crate::quantizer::{UniformQuantizerSpec, VqCodebook};
use crate::training::config::TrainConfig;
use crate::training::losses::{loss_ce1, loss_ce2, loss_cf};
use crate::training::report::{CurvePoint, TrainReport};

/// Runs `steps` optimizer steps, recording the curve and enforcing the
/// divergence guard. `step(t, lr)` performs one update and returns its loss.
pub(crate) fn run_phase(
    cfg: &TrainConfig,
    report: &mut TrainReport,
    phase: &str,
    steps: usize,
    mut step: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<()> {
    let mut initial: Option<f64> = None;
    let mut over = 0usize;
    for t in 0..steps {
        let loss = step(t, cfg.lr_at(t, steps))?;
        let global = report.curve.len();
        let init = *initial.get_or_insert(loss);
        if !loss.is_finite() {
            return Err(Error::Divergence { step: global, loss, initial: init });
        }
        if loss > cfg.divergence_factor * init {
            over += 1;
            if over >= cfg.divergence_patience {
                return Err(Error::Divergence { step: global, loss, initial: init });
            }
        } else {
            over = 0;
        }
        report.curve.push(CurvePoint { step: global, phase: phase.to_string(), loss });
    }
    Ok(())
}

fn apply(params: &mut ParamStore, adam: &mut AdamState, g: &Graph, grads: &Gradients, scope: &str, lr: f64) -> Result<()> {
    params.zero_grads();
    params.collect_grads_scoped(g, grads, scope);
    adam.lr = lr;
    adam_step(params, adam)
}

/// Epoch-wise shuffled minibatches.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect(), pos: n };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self, b: usize) -> Vec<usize> {
        let b = b.min(self.order.len());
        if self.pos + b > self.order.len() {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + b].to_vec();
        self.pos += b;
        out
    }

    fn noise(&mut self, cfg: &TrainConfig, flips: bool) -> Draw {
        let snr_db = if cfg.snr_max_db > cfg.snr_min_db {
            self.rng.random_range(cfg.snr_min_db..=cfg.snr_max_db)
        } else {
            cfg.snr_min_db
        };
        let seed = self.rng.random();
        let mut d = Draw { snr_db, seed, phase: 0.0, flip_tx: false, flip_rx: false };
        if cfg.augment {
            d.phase = self.rng.random_range(0.0..std::f64::consts::TAU);
            if flips {
                d.flip_tx = self.rng.random();
                d.flip_rx = self.rng.random();
            }
        }
        d
    }
}

/// Per-sample randomness of one training observation.
#[derive(Debug, Clone, Copy)]
struct Draw {
    snr_db: f64,
    seed: u64,
    phase: f64,
    flip_tx: bool,
    flip_rx: bool,
}

impl Draw {
    fn apply(&self, h: &ChannelTensor) -> ChannelTensor {
        let rot = num_complex::Complex64::from_polar(1.0, self.phase);
        let mut out = h.clone();
        for r in 0..h.n_rx {
            let rs = if self.flip_rx { h.n_rx - 1 - r } else { r };
            for k in 0..h.n_sub {
                for t in 0..h.n_tx {
                    let ts = if self.flip_tx { h.n_tx - 1 - t } else { t };
                    out.set(r, k, t, h.get(rs, k, ts) * rot);
                }
            }
        }
        out
    }

    fn is_identity(&self) -> bool {
        self.phase == 0.0 && !self.flip_tx && !self.flip_rx
    }
}

fn nonempty<T>(xs: &[T], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Validation(format!("no {what} samples")));
    }
    Ok(())
}

/// Noise seed of held-out observation `i`.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1 << 40).wrapping_add(i as u64)
}

pub fn eigen_batch(ws: &[&EigenMatrix]) -> Result<Tensor> {
    let toks: Vec<Tensor> = ws.iter().map(|w| tokenize_eigen(w).tokens).collect();
    stack(&toks.iter().collect::<Vec<_>>())
}

/// Dominant eigenvector per subband, falling back to the last power
/// iterate when the eigenvalue gap is too small to converge.
pub fn precoders_lenient(h: &ChannelTensor, n_subband: usize) -> Result<EigenMatrix> {
    if n_subband == 0 || h.n_sub % n_subband != 0 {
        return Err(Error::Validation(format!("{n_subband} subbands for {} subcarriers", h.n_sub)));
    }
    let width = h.n_sub / n_subband;
    let mut data = Vec::with_capacity(n_subband * h.n_tx);
    for s in 0..n_subband {
        data.extend(top_vector(&subband_gram(h, s, width))?);
    }
    let mut w = EigenMatrix::new(n_subband, h.n_tx, data)?;
    w.normalize_rows();
    Ok(w)
}

fn top_vector(m: &ComplexMatrix) -> Result<Vec<num_complex::Complex64>> {
    match hermitian_top_eigpair(m) {
        Ok(p) => Ok(p.vector),
        Err(Error::Convergence { iterate, .. }) => {
            Ok(iterate.chunks(2).map(|c| num_complex::Complex64::new(c[0], c[1])).collect())
        }
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------- feedback

fn calibrate(model: &mut FeedbackModel, tokens: &[Tensor], cfg: &TrainConfig) -> Result<()> {
    let mut lat = Vec::new();
    for chunk in tokens.chunks(cfg.batch_size) {
        let x = stack(&chunk.iter().collect::<Vec<_>>())?;
        lat.extend_from_slice(model.latents(&x, chunk.len())?.data());
    }
    match model.config.quant {
        QuantMode::Float => {}
        QuantMode::Uniform => {
            let spec = UniformQuantizerSpec::calibrated(model.config.quant_bits, &lat, 0.05)?;
            model.set_uniform_range(&spec)?;
        }
        QuantMode::Vq => {
            let d = model.config.d_q;
            let samples = Tensor::new(&[lat.len() / d, d], lat)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0DE);
            let cb = VqCodebook::from_samples(model.config.vq_size, &samples, model.config.vq_beta, &mut rng)?;
            model.params.get_mut("vq.codebook")?.value = cb.vectors;
        }
    }
    Ok(())
}

/// Held-out Rho with the configured quantizer and with it bypassed.
pub fn evaluate_feedback(model: &FeedbackModel, test: &[EigenMatrix]) -> Result<(f64, f64)> {
    nonempty(test, "test")?;
    let mut quant = Vec::with_capacity(test.len());
    let mut float = Vec::with_capacity(test.len());
    for w in test {
        quant.push(model.feedback(w)?.1);
        let mut g = Graph::new();
        let x = g.constant(tokenize_eigen(w).tokens);
        let f = model.forward(&mut g, x, 1, false)?;
        float.push(crate::flowmat::detokenize_eigen(g.value(f.output), w.n_tx)?);
    }
    Ok((rho(test, &quant)?, rho(test, &float)?))
}

fn feedback_phase(
    model: &mut FeedbackModel,
    tokens: &[Tensor],
    cfg: &TrainConfig,
    report: &mut TrainReport,
    phase: &str,
    steps: usize,
    quantize: bool,
    seed: u64,
) -> Result<()> {
    let mut sampler = Sampler::new(tokens.len(), seed);
    let mut adam = AdamState::new(cfg.lr);
    run_phase(cfg, report, phase, steps, |_, lr| {
        let idx = sampler.next(cfg.batch_size);
        let x = stack(&idx.iter().map(|&i| &tokens[i]).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let f = model.forward(&mut g, xv, idx.len(), quantize)?;
        let mut loss = loss_cf(&mut g, f.output, &x)?;
        let reported = g.value(loss).data()[0];
        if let Some(aux) = f.aux_loss {
            loss = g.add(loss, aux)?;
        }
        let grads = g.backward(loss)?;
        apply(&mut model.params, &mut adam, &g, &grads, "", lr)?;
        Ok(reported)
    })
}

/// Trains the feedback autoencoder on `1 − Rho`: a float phase, then, for a
/// quantized model, range or codebook calibration and a fine-tuning phase
/// with the quantizer in the loop.
pub fn train_feedback(
    model: &mut FeedbackModel,
    train: &[EigenMatrix],
    test: &[EigenMatrix],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    nonempty(train, "training")?;
    let start = Instant::now();
    let mut report = TrainReport { seed: cfg.seed, config: cfg.to_kv(), ..Default::default() };
    let tokens: Vec<Tensor> = train.iter().map(|w| tokenize_eigen(w).tokens).collect();
    feedback_phase(model, &tokens, cfg, &mut report, "float", cfg.steps, false, cfg.seed)?;
    if model.config.quant != QuantMode::Float {
        calibrate(model, &tokens, cfg)?;
        feedback_phase(model, &tokens, cfg, &mut report, "quant", cfg.quant_steps, true, cfg.seed ^ 1)?;
    }
    if !test.is_empty() {
        let (r, rf) = evaluate_feedback(model, test)?;
        report.metrics.insert("rho".into(), r);
        report.metrics.insert("rho_float".into(), rf);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

// -------------------------------------------------------------- estimation

struct EstBatch {
    pilots: Tensor,
    clean: Tensor,
    full: Tensor,
}

fn est_batch(
    model: &EstimationModel,
    geom: &SystemGeometry,
    chans: &[&ChannelTensor],
    noise: &[Draw],
) -> Result<EstBatch> {
    let mut p = Vec::with_capacity(chans.len());
    let mut c = Vec::with_capacity(chans.len());
    let mut f = Vec::with_capacity(chans.len());
    for (&h, d) in chans.iter().zip(noise) {
        let moved;
        let h = if d.is_identity() {
            h
        } else {
            moved = d.apply(h);
            &moved
        };
        let obs = observe_pilots(h, geom, d.snr_db, d.seed)?;
        p.push(model.pilot_tokens(&obs)?);
        c.push(tokenize_channel(&h.select_subcarriers(&model.pilots)?).tokens);
        f.push(tokenize_channel(h).tokens);
    }
    let r = |v: &Vec<Tensor>| stack(&v.iter().collect::<Vec<_>>());
    Ok(EstBatch { pilots: r(&p)?, clean: r(&c)?, full: r(&f)? })
}

fn check_geometry(model: &EstimationModel, geom: &SystemGeometry) -> Result<()> {
    if geom.pilots.indices != model.pilots
        || (geom.n_rx, geom.n_tx, geom.n_sub) != (model.n_rx, model.n_tx, model.config.n_tokens)
    {
        return Err(Error::Config("geometry does not match the estimation model".into()));
    }
    Ok(())
}

/// Held-out NMSE (dB) of the model and of LS with linear interpolation,
/// over the full band and at the pilots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationEval {
    pub nmse_db: f64,
    pub nmse_db_ls: f64,
    pub pilot_nmse_db: f64,
    pub pilot_nmse_db_ls: f64,
}

pub fn evaluate_estimation(
    model: &EstimationModel,
    geom: &SystemGeometry,
    test: &[ChannelTensor],
    snr_db: f64,
    seed: u64,
) -> Result<EstimationEval> {
    nonempty(test, "test")?;
    check_geometry(model, geom)?;
    let (mut full, mut ls_full, mut den, mut ls_p, mut clean) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, h) in test.iter().enumerate() {
        let obs = observe_pilots(h, geom, snr_db, eval_seed(seed, i))?;
        let mut g = Graph::new();
        let x = g.constant(model.pilot_tokens(&obs)?);
        let f = model.forward(&mut g, x, 1)?;
        full.push(crate::flowmat::detokenize_channel(g.value(f.full), model.n_rx, model.n_tx)?);
        den.push(crate::flowmat::detokenize_channel(g.value(f.denoised), model.n_rx, model.n_tx)?);
        let ls = ls_estimate(&obs)?;
        ls_full.push(interpolate_frequency(&ls, geom)?);
        ls_p.push(ls);
        clean.push(h.select_subcarriers(&model.pilots)?);
    }
    Ok(EstimationEval {
        nmse_db: nmse_db_batch(&full, test)?,
        nmse_db_ls: nmse_db_batch(&ls_full, test)?,
        pilot_nmse_db: nmse_db_batch(&den, &clean)?,
        pilot_nmse_db_ls: nmse_db_batch(&ls_p, &clean)?,
    })
}

fn record_estimation(report: &mut TrainReport, e: &EstimationEval) {
    report.metrics.insert("nmse_db".into(), e.nmse_db);
    report.metrics.insert("nmse_db_ls".into(), e.nmse_db_ls);
    report.metrics.insert("pilot_nmse_db".into(), e.pilot_nmse_db);
    report.metrics.insert("pilot_nmse_db_ls".into(), e.pilot_nmse_db_ls);
}

/// Parameters left trainable by the model configuration.
fn restore_trainable(model: &mut EstimationModel) {
    model.params.set_trainable("", true);
    let t = model.config.mask_token_trainable;
    model.params.set_trainable("mask_token", t);
}

/// Phase 1 fits the denoiser to clean pilots; phase 2 freezes it and fits
/// the decoder (and mask token) to the full channel.
pub fn train_progressive(
    model: &mut EstimationModel,
    geom: &SystemGeometry,
    train: &[ChannelTensor],
    test: &[ChannelTensor],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    nonempty(train, "training")?;
    check_geometry(model, geom)?;
    let start = Instant::now();
    let mut report = TrainReport { seed: cfg.seed, config: cfg.to_kv(), ..Default::default() };
    let mut sampler = Sampler::new(train.len(), cfg.seed);

    model.params.set_trainable("", false);
    model.params.set_trainable("den.", true);
    let mut adam = AdamState::new(cfg.lr);
    let res = run_phase(cfg, &mut report, "denoise", cfg.steps, |_, lr| {
        let idx = sampler.next(cfg.batch_size);
        let noise: Vec<_> = idx.iter().map(|_| sampler.noise(cfg, true)).collect();
        let b = est_batch(model, geom, &idx.iter().map(|&i| &train[i]).collect::<Vec<_>>(), &noise)?;
        let mut g = Graph::new();
        let x = g.constant(b.pilots);
        let d = model.denoise(&mut g, x, idx.len())?;
        let loss = loss_ce1(&mut g, d, &b.clean, cfg.loss_mode)?;
        let grads = g.backward(loss)?;
        apply(&mut model.params, &mut adam, &g, &grads, "", lr)?;
        Ok(g.value(loss).data()[0])
    });
    if let Err(e) = res {
        restore_trainable(model);
        return Err(e);
    }

    model.params.set_trainable("", false);
    model.params.set_trainable("dec.", true);
    model.params.set_trainable("mask_token", model.config.mask_token_trainable);
    let mut adam = AdamState::new(cfg.lr);
    let res = run_phase(cfg, &mut report, "decode", cfg.steps2, |_, lr| {
        let idx = sampler.next(cfg.batch_size);
        let noise: Vec<_> = idx.iter().map(|_| sampler.noise(cfg, true)).collect();
        let b = est_batch(model, geom, &idx.iter().map(|&i| &train[i]).collect::<Vec<_>>(), &noise)?;
        let mut g = Graph::new();
        let x = g.constant(b.pilots);
        let f = model.forward(&mut g, x, idx.len())?;
        let loss = loss_ce2(&mut g, f.full, &b.full, cfg.loss_mode)?;
        let grads = g.backward(loss)?;
        apply(&mut model.params, &mut adam, &g, &grads, "", lr)?;
        Ok(g.value(loss).data()[0])
    });
    restore_trainable(model);
    res?;
    if !test.is_empty() {
        record_estimation(&mut report, &evaluate_estimation(model, geom, test, cfg.eval_snr_db, cfg.seed)?);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Minimizes the pilot and full-band losses together.
pub fn train_joint(
    model: &mut EstimationModel,
    geom: &SystemGeometry,
    train: &[ChannelTensor],
    test: &[ChannelTensor],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    nonempty(train, "training")?;
    check_geometry(model, geom)?;
    let start = Instant::now();
    let mut report = TrainReport { seed: cfg.seed, config: cfg.to_kv(), ..Default::default() };
    let mut sampler = Sampler::new(train.len(), cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    run_phase(cfg, &mut report, "joint", cfg.steps, |_, lr| {
        let idx = sampler.next(cfg.batch_size);
        let noise: Vec<_> = idx.iter().map(|_| sampler.noise(cfg, true)).collect();
        let b = est_batch(model, geom, &idx.iter().map(|&i| &train[i]).collect::<Vec<_>>(), &noise)?;
        let mut g = Graph::new();
        let x = g.constant(b.pilots);
        let f = model.forward(&mut g, x, idx.len())?;
        let l1 = loss_ce1(&mut g, f.denoised, &b.clean, cfg.loss_mode)?;
        let l2 = loss_ce2(&mut g, f.full, &b.full, cfg.loss_mode)?;
        let loss = g.add(l1, l2)?;
        let grads = g.backward(loss)?;
        apply(&mut model.params, &mut adam, &g, &grads, "", lr)?;
        Ok(g.value(loss).data()[0])
    })?;
    if !test.is_empty() {
        record_estimation(&mut report, &evaluate_estimation(model, geom, test, cfg.eval_snr_db, cfg.seed)?);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

// ------------------------------------------------------------ composition

/// Held-out quality of pilots → estimate → precoders → feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposedEval {
    pub rho: f64,
    pub nmse_db: f64,
}

/// Evaluates the two models in sequence; both are borrowed immutably, so no
/// training signal can pass between them.
pub fn evaluate_composed(
    est: &EstimationModel,
    fb: &FeedbackModel,
    geom: &SystemGeometry,
    test: &[ChannelTensor],
    snr_db: f64,
    seed: u64,
) -> Result<ComposedEval> {
    nonempty(test, "test")?;
    let mut truth = Vec::with_capacity(test.len());
    let mut recon = Vec::with_capacity(test.len());
    let mut ests = Vec::with_capacity(test.len());
    for (i, h) in test.iter().enumerate() {
        let obs = observe_pilots(h, geom, snr_db, eval_seed(seed, i))?;
        let e = est.estimate(&obs)?;
        let w_hat = precoders_lenient(&e, geom.n_subband)?;
        recon.push(fb.feedback(&w_hat)?.1);
        truth.push(precoders_lenient(h, geom.n_subband)?);
        ests.push(e);
    }
    Ok(ComposedEval { rho: rho(&truth, &recon)?, nmse_db: nmse_db_batch(&ests, test)? })
}

/// Trains the estimation model progressively and the feedback model on true
/// precoders, independently.
pub fn train_splited(
    est: &mut EstimationModel,
    fb: &mut FeedbackModel,
    geom: &SystemGeometry,
    train: &[ChannelTensor],
    test: &[ChannelTensor],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    let mut report = train_progressive(est, geom, train, &[], cfg)?;
    let w_train = train.iter().map(|h| precoders_lenient(h, geom.n_subband)).collect::<Result<Vec<_>>>()?;
    let fb_report = train_feedback(fb, &w_train, &[], cfg)?;
    let offset = report.curve.len();
    report.curve.extend(fb_report.curve.into_iter().map(|mut p| {
        p.step += offset;
        p.phase = format!("feedback_{}", p.phase);
        p
    }));
    if !test.is_empty() {
        let c = evaluate_composed(est, fb, geom, test, cfg.eval_snr_db, cfg.seed)?;
        report.metrics.insert("rho".into(), c.rho);
        report.metrics.insert("nmse_db".into(), c.nmse_db);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Start vectors for the unrolled power steps: the exact dominant
/// eigenvector of each real-embedded Gram block.
fn power_start(gram: &Tensor) -> Result<Tensor> {
    let w = gram.cols();
    let n = w / 2;
    let blocks = gram.rows() / w;
    let mut out = Vec::with_capacity(blocks * w);
    for b in 0..blocks {
        let base = b * w;
        let m = ComplexMatrix::from_fn(n, n, |r, c| {
            num_complex::Complex64::new(gram.get(base + r, c), gram.get(base + n + r, c))
        });
        let mut sym = m.clone();
        sym.add_scaled(&m.conj_transpose(), 1.0)?;
        let v = top_vector(&sym)?;
        out.extend(v.iter().map(|z| z.re));
        out.extend(v.iter().map(|z| z.im));
    }
    Tensor::new(&[blocks, w], out)
}

fn end_to_end_phase(
    est: &mut EstimationModel,
    fb: &mut FeedbackModel,
    geom: &SystemGeometry,
    train: &[ChannelTensor],
    targets: &[Tensor],
    cfg: &TrainConfig,
    report: &mut TrainReport,
    phase: &str,
    steps: usize,
    quantize: bool,
    seed: u64,
) -> Result<()> {
    let per_band = geom.n_sub / geom.n_subband;
    let mut sampler = Sampler::new(train.len(), seed);
    let mut adam_e = AdamState::new(cfg.lr);
    let mut adam_f = AdamState::new(cfg.lr);
    run_phase(cfg, report, phase, steps, |_, lr| {
        let idx = sampler.next(cfg.batch_size);
        let noise: Vec<_> = idx.iter().map(|_| sampler.noise(cfg, false)).collect();
        let b = est_batch(est, geom, &idx.iter().map(|&i| &train[i]).collect::<Vec<_>>(), &noise)?;
        let target = stack(&idx.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        g.set_scope("est.");
        let x = g.constant(b.pilots);
        let f = est.forward(&mut g, x, idx.len())?;
        let gram = g.subband_gram(f.full, est.n_rx, est.n_tx, per_band)?;
        let v0 = power_start(g.value(gram))?;
        let mut v = g.constant(v0);
        for _ in 0..cfg.power_iters {
            v = g.block_matvec(gram, v)?;
            v = g.row_normalize(v)?;
        }
        g.set_scope("fb.");
        let out = fb.forward(&mut g, v, idx.len(), quantize)?;
        let mut loss = loss_cf(&mut g, out.output, &target)?;
        let reported = g.value(loss).data()[0];
        if let Some(aux) = out.aux_loss {
            loss = g.add(loss, aux)?;
        }
        let grads = g.backward(loss)?;
        apply(&mut est.params, &mut adam_e, &g, &grads, "est.", lr)?;
        apply(&mut fb.params, &mut adam_f, &g, &grads, "fb.", lr)?;
        Ok(reported)
    })
}

/// Pilots → estimation → differentiable power iteration → feedback, trained
/// on `1 − Rho` against the true precoders through the whole graph.
pub fn train_end_to_end(
    est: &mut EstimationModel,
    fb: &mut FeedbackModel,
    geom: &SystemGeometry,
    train: &[ChannelTensor],
    test: &[ChannelTensor],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    nonempty(train, "training")?;
    check_geometry(est, geom)?;
    if fb.config.n_tokens != geom.n_subband || fb.config.d_tok != 2 * geom.n_tx {
        return Err(Error::Config("feedback model does not match the subband layout".into()));
    }
    let start = Instant::now();
    let mut report = TrainReport { seed: cfg.seed, config: cfg.to_kv(), ..Default::default() };
    let w_train = train.iter().map(|h| precoders_lenient(h, geom.n_subband)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<Tensor> = w_train.iter().map(|w| tokenize_eigen(w).tokens).collect();
    end_to_end_phase(est, fb, geom, train, &targets, cfg, &mut report, "end_to_end", cfg.steps, false, cfg.seed)?;
    if fb.config.quant != QuantMode::Float {
        calibrate(fb, &targets, cfg)?;
        end_to_end_phase(est, fb, geom, train, &targets, cfg, &mut report, "quant", cfg.quant_steps, true, cfg.seed ^ 1)?;
    }
    if !test.is_empty() {
        let c = evaluate_composed(est, fb, geom, test, cfg.eval_snr_db, cfg.seed)?;
        report.metrics.insert("rho".into(), c.rho);
        report.metrics.insert("nmse_db".into(), c.nmse_db);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
