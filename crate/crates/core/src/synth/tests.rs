use super::*;
use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = Rng::new(seed, "img");
    Tensor::from_fn(&[c, h, w], |_| rng.uniform_in(-1.0, 1.0) as f32)
}

#[test]
fn anomaly_mask_cases() {
    let field = perlin2d(&mut Rng::new(1, "p"), 16, 16, 4, 4).unwrap();
    let max = field.values().iter().cloned().fold(f64::MIN, f64::max);
    assert!(!make_anomaly_mask(&field, max + 1.0, &Mask::full(16, 16)).unwrap().any());
    assert!(!make_anomaly_mask(&field, -2.0, &Mask::empty(16, 16)).unwrap().any());
    assert!(make_anomaly_mask(&field, 0.0, &Mask::full(8, 16)).is_err());

    let values: Vec<f64> = (0..64).map(|i| ((i * 37) % 64) as f64 / 32.0 - 1.0).collect();
    let hand = PerlinField::from_values(8, 8, values.clone()).unwrap();
    let m = make_anomaly_mask(&hand, 0.5, &Mask::full(8, 8)).unwrap();
    for (i, v) in values.iter().enumerate() {
        assert_eq!(m.bits()[i], *v > 0.5);
    }
}

#[test]
fn synthesize_collapses() {
    let n = random_image(1, 3, 8, 8);
    let a = random_image(2, 3, 8, 8);
    let none = synthesize(&n, &a, &Mask::empty(8, 8), 0.4).unwrap();
    assert_eq!(none.image, n);
    assert_eq!(none.label, 0);
    let blob = Mask::from_fn(8, 8, |y, x| y > 2 && x < 5);
    let opaque = synthesize(&n, &a, &blob, 1.0).unwrap();
    assert_eq!(opaque.image, n);
    assert_eq!(opaque.label, 1);
    let replaced = synthesize(&n, &a, &Mask::full(8, 8), 0.0).unwrap();
    assert_eq!(replaced.image, a);
    assert!(synthesize(&n, &a, &blob, 1.5).is_err());
    assert!(synthesize(&n, &a, &Mask::full(4, 8), 0.5).is_err());
    assert!(synthesize(&n, &random_image(3, 1, 8, 8), &blob, 0.5).is_err());
}

#[test]
fn generated_samples_respect_contract() {
    let config = SynthConfig {
        foreground: ForegroundMode::Texture,
        ..SynthConfig::default()
    };
    let mut rng = Rng::new(5, "gen");
    for i in 0..60 {
        let n = random_image(100 + i, 3, 32, 32);
        let s = generate_anomaly(&n, None, &config, &mut rng).unwrap();
        assert_eq!(s.label, 1);
        let area = s.mask.count() as f64;
        assert!(area > 0.0 && area <= 0.4 * 1024.0);
        for ch in 0..3 {
            for p in 0..1024 {
                if !s.mask.bits()[p] {
                    assert_eq!(s.image.data()[ch * 1024 + p].to_bits(), n.data()[ch * 1024 + p].to_bits());
                }
            }
        }
    }
}

#[test]
fn object_mode_stays_on_the_object() {
    let n = Tensor::<f32>::from_fn(&[1, 32, 32], |i| {
        let (y, x) = (i / 32, i % 32);
        if (8..24).contains(&y) && (8..24).contains(&x) {
            0.7
        } else {
            -0.9
        }
    });
    let mut rng = Rng::new(6, "gen");
    for _ in 0..30 {
        let s = generate_anomaly(&n, None, &SynthConfig::default(), &mut rng).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if s.mask.get(y, x) {
                    assert!((8..24).contains(&y) && (8..24).contains(&x));
                }
            }
        }
        assert!(s.mask.count() as f64 <= 0.4 * 256.0);
    }
    let black = Tensor::<f32>::full(&[1, 32, 32], -1.0);
    assert!(generate_anomaly(&black, None, &SynthConfig::default(), &mut rng).is_err());
}

#[test]
fn deterministic_given_seed() {
    let n = random_image(9, 3, 16, 16);
    let config = SynthConfig {
        foreground: ForegroundMode::Texture,
        ..SynthConfig::default()
    };
    let a = generate_anomaly(&n, None, &config, &mut Rng::new(3, "g")).unwrap();
    let b = generate_anomaly(&n, None, &config, &mut Rng::new(3, "g")).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn threshold_monotone(seed in 0u64..1000, lo in -1.0f64..1.0, step in 0.0f64..1.0) {
        let field = perlin2d(&mut Rng::new(seed, "p"), 16, 16, 2, 2).unwrap();
        let fg = Mask::from_fn(16, 16, |y, x| (x + y) % 3 != 0);
        let low = make_anomaly_mask(&field, lo, &fg).unwrap();
        let high = make_anomaly_mask(&field, lo + step, &fg).unwrap();
        for (h, l) in high.bits().iter().zip(low.bits()) {
            prop_assert!(!h || *l);
        }
    }

    #[test]
    fn blend_is_exact_outside_and_affine_inside(
        seed in 0u64..1000,
        opacity in 0.0f64..=1.0,
        bits in proptest::collection::vec(any::<bool>(), 36),
    ) {
        let n = random_image(seed, 2, 6, 6);
        let a = random_image(seed + 1, 2, 6, 6);
        let mask = Mask::new(6, 6, bits).unwrap();
        let s = synthesize(&n, &a, &mask, opacity).unwrap();
        prop_assert_eq!(s.label == 1, mask.any());
        for ch in 0..2 {
            for p in 0..36 {
                let i = ch * 36 + p;
                let (got, nv, av) = (s.image.data()[i], n.data()[i], a.data()[i]);
                if mask.bits()[p] {
                    let expected = opacity * nv as f64 + (1.0 - opacity) * av as f64;
                    prop_assert!((got as f64 - expected).abs() < 1e-6);
                } else {
                    prop_assert_eq!(got.to_bits(), nv.to_bits());
                }
            }
        }
    }
}
