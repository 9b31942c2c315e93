use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{observe_pilots, generate_channel, MultipathProfile, PilotPattern, SystemGeometry};
use crate::flowmat::*;
use crate::numerics::graph::softmax_in_place;
use crate::numerics::{param_grad_check, Graph, ParamStore, Tensor, Var};

fn tiny(n: usize, keep: usize) -> ModelConfig {
    ModelConfig {
        n_tokens: n,
        d_tok: 6,
        d_model: 8,
        n_heads: 1,
        enc_depth: 2,
        dec_depth: 2,
        d_q: 3,
        keep,
        query_learnable: false,
        init_seed: 5,
        ..Default::default()
    }
}

fn unit_tokens(rows: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::randn(&[rows, d], 1.0, &mut rng);
    for r in t.data_mut().chunks_mut(d) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    t
}

fn probe(g: &mut Graph, y: Var, seed: u64) -> crate::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::randn(g.shape(y), 1.0, &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn encoder_shape() {
    let cfg = ModelConfig { d_tok: 64, ..Default::default() };
    let m = FeedbackModel::new(cfg).unwrap();
    let mut g = Graph::new();
    let x = g.constant(unit_tokens(13, 64, 1));
    let z = m.encode(&mut g, x, 1, None).unwrap();
    assert_eq!(g.shape(z), &[13, 64]);
}

#[test]
fn zero_bias_mat_equals_att() {
    let m = FeedbackModel::new(tiny(5, 5)).unwrap();
    let bias = build_mask_bias(&[0, 1, 2, 3, 4], 5, MaskMode::Hard).unwrap();
    let x = unit_tokens(10, 6, 2);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let a = m.encode(&mut g, xv, 2, Some(&bias)).unwrap();
    let b = m.encode(&mut g, xv, 2, None).unwrap();
    assert_eq!(g.value(a), g.value(b));
}

fn brute_attention(q: &Tensor, k: &Tensor, v: &Tensor, bias: &Tensor) -> Tensor {
    let (n, d) = q.dims2();
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        let mut w: Vec<f64> = (0..n)
            .map(|h| {
                let s: f64 = (0..d).map(|c| q.get(r, c) * k.get(h, c)).sum();
                (s + bias.get(r, h)) / (d as f64).sqrt()
            })
            .collect();
        softmax_in_place(&mut w);
        for c in 0..d {
            out[r * d + c] = (0..n).map(|h| w[h] * v.get(h, c)).sum();
        }
    }
    Tensor::new(&[n, d], out).unwrap()
}

#[test]
fn mask_attention_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (q, k, v) = (
        Tensor::randn(&[4, 3], 1.0, &mut rng),
        Tensor::randn(&[4, 3], 1.0, &mut rng),
        Tensor::randn(&[4, 3], 1.0, &mut rng),
    );
    for mode in [MaskMode::Hard, MaskMode::PaperLiteral] {
        let bias = build_mask_bias(&[1, 2], 4, mode).unwrap();
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let out = g.attention(qv, kv, vv, Some(&bias), 1, 1).unwrap();
        assert!(g.value(out).max_abs_diff(&brute_attention(&q, &k, &v, &bias)) < 1e-10);
    }
}

#[test]
fn decoder_hard_bias_isolates_masked_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 5;
    let kept = [1, 3];
    let inv = build_inverse_bias(&kept, n, MaskMode::Hard).unwrap();
    let mut g = Graph::new();
    let q = g.constant(Tensor::randn(&[n, 4], 3.0, &mut rng));
    let k = g.constant(Tensor::randn(&[n, 4], 3.0, &mut rng));
    let v = g.constant(Tensor::randn(&[n, 4], 1.0, &mut rng));
    let a = g.attention(q, k, v, Some(&inv), 1, 2).unwrap();
    let p = g.attention_probs(a).unwrap();
    for h in 0..2 {
        for r in [0, 2, 4] {
            let masked: f64 = [0, 2, 4].iter().map(|&c| p[(h * n + r) * n + c]).sum();
            assert!(masked < 1e-9, "row {r}: {masked}");
        }
    }
    // the literal bias only reweights: masked keys keep weight
    let lit = build_inverse_bias(&kept, n, MaskMode::PaperLiteral).unwrap();
    let b = g.attention(q, k, v, Some(&lit), 1, 2).unwrap();
    let p = g.attention_probs(b).unwrap();
    assert!(p[2] > 1e-6);
}

#[test]
fn full_keep_matches_mask_free_path() {
    for learnable in [false, true] {
        let cfg = ModelConfig { query_learnable: learnable, ..tiny(6, 6) };
        let m = FeedbackModel::new(cfg).unwrap();
        let mut g = Graph::new();
        let x = g.constant(unit_tokens(18, 6, 4));
        let f = m.forward(&mut g, x, 3, false).unwrap();
        let u = m.forward_unmasked(&mut g, x, 3).unwrap();
        let (a, b) = (g.value(f.output).data(), g.value(u).data());
        assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn reconstruction_is_unit_norm() {
    let m = FeedbackModel::new(tiny(6, 3)).unwrap();
    let w = detokenize_eigen(&unit_tokens(6, 6, 9), 3).unwrap();
    let (p, r) = m.feedback(&w).unwrap();
    assert!(p.is_none());
    for s in 0..6 {
        let n: f64 = r.row(s).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn uniform_payload_is_64_bits_and_decodes_alone() {
    let cfg = ModelConfig { quant: QuantMode::Uniform, quant_bits: 2, keep: 8, d_q: 4, d_tok: 64, ..Default::default() };
    let m = FeedbackModel::new(cfg).unwrap();
    let w = detokenize_eigen(&unit_tokens(13, 64, 10), 32).unwrap();
    let (p, r) = m.feedback(&w).unwrap();
    let p = p.unwrap();
    assert_eq!(p.bit_len, 64);
    let wire = crate::quantizer::BitPayload::from_bytes(&p.to_bytes()).unwrap();
    assert_eq!(m.reconstruct(&wire).unwrap(), r);
}

#[test]
fn vq_payload_decodes_alone() {
    let cfg = ModelConfig { quant: QuantMode::Vq, vq_size: 16, ..tiny(6, 3) };
    let m = FeedbackModel::new(cfg).unwrap();
    let w = detokenize_eigen(&unit_tokens(6, 6, 11), 3).unwrap();
    let (p, r) = m.feedback(&w).unwrap();
    let p = p.unwrap();
    assert_eq!(p.bit_len, 3 * 4);
    assert_eq!(m.reconstruct(&p).unwrap(), r);
}

#[test]
fn zero_frozen_mask_token() {
    let cfg = ModelConfig { mask_token_trainable: false, ..tiny(4, 2) };
    let m = FeedbackModel::new(cfg).unwrap();
    let t = m.params.get("mask_token").unwrap();
    assert!(!t.requires_grad);
    let y = insert_mask_tokens(&Tensor::full(&[2, 8], 1.0), &[0, 3], 4, &t.value).unwrap();
    assert!(y.row(1).iter().chain(y.row(2)).all(|&v| v == 0.0));
    let r = ModelConfig { mask_token_init: MaskTokenInit::Randn, ..tiny(4, 2) };
    let m = FeedbackModel::new(r).unwrap();
    assert!(m.params.get("mask_token").unwrap().value.data().iter().any(|&v| v != 0.0));
}

#[test]
fn reductions_keep_shapes() {
    for red in [TokenReduction::Dense, TokenReduction::Merge] {
        let m = FeedbackModel::new(ModelConfig { reduction: red, ..tiny(6, 2) }).unwrap();
        assert!(m.kept().unwrap().is_empty());
        let mut g = Graph::new();
        let x = g.constant(unit_tokens(12, 6, 12));
        let f = m.forward(&mut g, x, 2, false).unwrap();
        assert_eq!(g.shape(f.latent), &[4, 3]);
        assert_eq!(g.shape(f.output), &[12, 6]);
    }
}

#[test]
fn feedback_graph_gradients() {
    for mode in [MaskMode::Hard, MaskMode::PaperLiteral] {
        let cfg = ModelConfig { mask_mode: mode, ..tiny(4, 2) };
        let m = FeedbackModel::new(cfg.clone()).unwrap();
        let x = unit_tokens(8, 6, 13);
        let err = param_grad_check(
            &m.params,
            |g, store: &ParamStore| {
                let mm = FeedbackModel { config: cfg.clone(), params: store.clone() };
                let xv = g.constant(x.clone());
                let f = mm.forward(g, xv, 2, false)?;
                probe(g, f.output, 1)
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{mode:?}: {err}");
    }
}

#[test]
fn learnable_query_receives_gradient() {
    let m = FeedbackModel::new(ModelConfig { query_learnable: true, ..tiny(4, 2) }).unwrap();
    let mut g = Graph::new();
    let x = g.constant(unit_tokens(4, 6, 14));
    let f = m.forward(&mut g, x, 1, false).unwrap();
    let l = probe(&mut g, f.output, 2).unwrap();
    let grads = g.backward(l).unwrap();
    let mut p = m.params.clone();
    p.collect_grads(&g, &grads);
    let qg = p.get("query").unwrap().grad.clone().unwrap();
    let kept = f.kept;
    assert!(kept.iter().any(|&k| qg.data()[k] != 0.0));
    assert!((0..4).filter(|k| !kept.contains(k)).all(|k| qg.data()[k] == 0.0));
}

#[test]
fn checkpoint_restores_model() {
    let cfg = ModelConfig { quant: QuantMode::Uniform, query_learnable: true, ..tiny(6, 3) };
    let mut m = FeedbackModel::new(cfg).unwrap();
    m.params.get_mut("query").unwrap().value = Tensor::new(&[6, 1], vec![0.0, 5.0, 0.1, 4.0, 3.0, 0.0]).unwrap();
    m.set_uniform_range(&crate::quantizer::UniformQuantizerSpec::new(2, -0.7, 0.9).unwrap()).unwrap();
    let ck = m.to_checkpoint().unwrap();
    assert_eq!(ck.kept, vec![1, 3, 4]);
    let back = FeedbackModel::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
    let w = detokenize_eigen(&unit_tokens(6, 6, 15), 3).unwrap();
    assert_eq!(back.feedback(&w).unwrap(), m.feedback(&w).unwrap());
    assert!(EstimationModel::from_checkpoint(&ck).is_err());
}

#[test]
fn mixer_is_identity_at_init() {
    let cfg = ModelConfig { d_model: 8, n_heads: 2, ..Default::default() };
    let m = EstimationModel::new(cfg, 1, 4, 8, vec![0, 2, 4, 6]).unwrap();
    let x = unit_tokens(8, 8, 16);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let d = m.denoise(&mut g, xv, 2).unwrap();
    assert_eq!(g.value(d), &x);
}

#[test]
fn estimation_starts_at_linear_interpolation() {
    let pat = PilotPattern::custom(vec![1, 4, 6]).unwrap();
    let geom = SystemGeometry::new(2, 2, 8, 1, pat.clone(), 30e3).unwrap();
    let h = generate_channel(&geom, &MultipathProfile { n_paths: 2, delay_spread: 1e-6, angle_spread: 0.2, seed: 4 }).unwrap();
    let obs = observe_pilots(&h, &geom, 5.0, 6).unwrap();
    let cfg = ModelConfig { d_model: 8, n_heads: 2, dec_depth: 1, mixer_blocks: 1, ..Default::default() };
    let m = EstimationModel::new(cfg.clone(), 2, 2, 8, pat.indices.clone()).unwrap();
    let want = crate::channel::interpolate_frequency(&crate::channel::ls_estimate(&obs).unwrap(), &geom).unwrap();
    let got = m.estimate(&obs).unwrap();
    let diff = got.data.iter().zip(&want.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
    let plain = EstimationModel::new(ModelConfig { interp_skip: false, ..cfg }, 2, 2, 8, pat.indices).unwrap();
    assert_ne!(plain.estimate(&obs).unwrap(), want);
}

#[test]
fn estimation_shapes_low_density() {
    let pat = PilotPattern::low_density(52, 8).unwrap();
    let geom = SystemGeometry::new(4, 4, 416, 13, pat.clone(), 30e3).unwrap();
    let h = generate_channel(&geom, &MultipathProfile { n_paths: 3, delay_spread: 3e-7, angle_spread: 0.2, seed: 1 }).unwrap();
    let obs = observe_pilots(&h, &geom, 10.0, 2).unwrap();
    let cfg = ModelConfig { d_model: 8, n_heads: 2, dec_depth: 1, mixer_blocks: 1, ..Default::default() };
    let m = EstimationModel::new(cfg, 4, 4, 416, pat.indices).unwrap();
    assert_eq!(m.pilot_tokens(&obs).unwrap().shape(), &[48, 32]);
    let est = m.estimate(&obs).unwrap();
    assert_eq!((est.n_rx, est.n_sub, est.n_tx), (4, 416, 4));
}

#[test]
fn estimation_gradients_and_checkpoint() {
    let cfg = ModelConfig { d_model: 8, n_heads: 1, dec_depth: 2, mixer_blocks: 1, init_seed: 3, ..Default::default() };
    let mut m = EstimationModel::new(cfg, 1, 2, 6, vec![0, 3, 5]).unwrap();
    // move off the zero init so every path carries gradient
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    m.params.get_mut("den.out.w").unwrap().value = Tensor::randn(&[8, 4], 0.3, &mut rng);
    m.params.get_mut("dec.out.w").unwrap().value = Tensor::randn(&[8, 4], 0.3, &mut rng);
    let x = unit_tokens(6, 4, 17);
    let err = param_grad_check(
        &m.params,
        |g, store: &ParamStore| {
            let mm = EstimationModel { params: store.clone(), ..m.clone() };
            let xv = g.constant(x.clone());
            let f = mm.forward(g, xv, 2)?;
            let a = probe(g, f.full, 3)?;
            let b = probe(g, f.denoised, 4)?;
            g.add(a, b)
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    let geom = SystemGeometry::new(2, 1, 6, 1, PilotPattern::custom(vec![0, 3, 5]).unwrap(), 30e3).unwrap();
    let mut h = crate::channel::ChannelTensor::zeros(1, 6, 2);
    h.data.iter_mut().enumerate().for_each(|(i, z)| z.re = i as f64);
    let obs = observe_pilots(&h, &geom, 10.0, 1).unwrap();
    let back = EstimationModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(back.estimate(&obs).unwrap(), m.estimate(&obs).unwrap());
}
