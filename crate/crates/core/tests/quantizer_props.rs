use flowmat_core::numerics::Tensor;
use flowmat_core::quantizer::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn uniform_error_is_at_most_half_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for bits in 1..=12u8 {
        let spec = UniformQuantizerSpec::new(bits, -2.0, 3.0).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random_range(-2.0..=3.0)).collect();
        let back = uniform_round_trip(&xs, &spec);
        for (x, y) in xs.iter().zip(&back) {
            assert!((x - y).abs() <= spec.step() / 2.0 * (1.0 + 1e-12), "{bits}: {x} -> {y}");
        }
    }
}

#[test]
fn vq_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [2usize, 16, 256] {
        let cb = Tensor::randn(&[k, 4], 1.0, &mut rng);
        let x = Tensor::randn(&[500, 4], 1.0, &mut rng);
        let got = vq_nearest(&x, &cb).unwrap();
        for (i, &j) in got.iter().enumerate() {
            let d = |c: usize| x.row(i).iter().zip(cb.row(c)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k).fold(0, |b, c| if d(c) < d(b) { c } else { b });
            assert_eq!(j as usize, best);
        }
    }
}

#[test]
fn budget_bit_counts() {
    for (b, want) in [(2u8, 64), (4, 128), (8, 256)] {
        assert_eq!(payload_bits(&Scheme::Uniform { bits: b, lo: 0.0, hi: 1.0 }, 8, 4).unwrap(), want);
    }
    for (k, want) in [(256u32, 64), (65536, 128)] {
        assert_eq!(payload_bits(&Scheme::Vq { codebook_size: k }, 8, 4).unwrap(), want);
    }
    assert!(payload_bits(&Scheme::Vq { codebook_size: 100 }, 8, 4).is_err());
}

proptest! {
    #[test]
    fn round_trip_bound(bits in 1u8..=16, lo in -10.0f64..0.0, width in 0.01f64..20.0, t in 0.0f64..=1.0) {
        let hi = lo + width;
        let spec = UniformQuantizerSpec::new(bits, lo, hi).unwrap();
        let x = lo + t * width;
        let y = uniform_round_trip(&[x], &spec)[0];
        prop_assert!((x - y).abs() <= spec.step() / 2.0 * (1.0 + 1e-9));
    }

    #[test]
    fn payload_round_trip(bits in 1u8..=16, raw in proptest::collection::vec(any::<u32>(), 1..64)) {
        let scheme = Scheme::Uniform { bits, lo: -1.0, hi: 1.0 };
        let idx: Vec<u32> = raw.iter().map(|v| v & ((1u32 << bits) - 1)).collect();
        let p = BitPayload::pack(scheme, &idx).unwrap();
        prop_assert_eq!(p.bit_len as usize, idx.len() * bits as usize);
        prop_assert_eq!(p.unpack().unwrap(), idx.clone());
        let back = BitPayload::from_bytes(&p.to_bytes()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn indices_stay_in_range(bits in 1u8..=8, x in -100.0f64..100.0) {
        let spec = UniformQuantizerSpec::new(bits, -1.0, 1.0).unwrap();
        prop_assert!(spec.index(x) < spec.levels());
    }
}
