//! Cross-module invariants, mostly as property tests in f64.

use crate::data::{grid_peak_ratio, perturb, toy_image, GrayImage, PerturbKind, ToySplit};
use crate::model::{spatial_process_block, wavelet_enhanced_stem, ModelConfig, ModelParams};
use crate::tensor::ops::{conv2d, sigmoid_scalar};
use crate::tensor::{Conv2dSpec, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv2d_is_linear(
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let x = rand_t(&[2, 3, 9, 9], seed);
        let y = rand_t(&[2, 3, 9, 9], seed ^ 1);
        let w = rand_t(&[4, 3, 3, 3], seed ^ 2);
        let spec = Conv2dSpec::new(stride, pad, 1);
        let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = conv2d(&mix, &w, None, spec).unwrap();
        let cx = conv2d(&x, &w, None, spec).unwrap();
        let cy = conv2d(&y, &w, None, spec).unwrap();
        let rhs = cx.zip_map(&cy, |p, q| a * p + b * q).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn bce_gradient_is_sigmoid_minus_label(
        z in prop::collection::vec(-30.0f64..30.0, 1..12),
        bits in any::<u16>(),
    ) {
        let labels: Vec<f64> = (0..z.len()).map(|i| f64::from((bits >> i) & 1)).collect();
        let mut tape = Tape::new();
        let v = tape.param(Tensor::new(vec![z.len()], z.clone()).unwrap());
        let loss = tape.bce_with_logits(v, &labels).unwrap();
        let g = tape.backward(loss).unwrap();
        let grad = g.get(v).unwrap();
        // the loss is a mean, so each sample carries a 1/N factor
        let n = z.len() as f64;
        for ((&zi, &yi), &gi) in z.iter().zip(&labels).zip(grad.data()) {
            prop_assert!((gi * n - (sigmoid_scalar(zi) - yi)).abs() < 1e-10);
        }
    }

    #[test]
    fn byte_levels_roundtrip_through_unit_floats(
        w in 1usize..24,
        h in 1usize..24,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px: Vec<u8> = (0..w * h).map(|_| rand::Rng::random(&mut rng)).collect();
        let img = GrayImage::new(w, h, px).unwrap();
        let unit = img.to_unit();
        prop_assert_eq!(GrayImage::from_unit(w, h, &unit).unwrap(), img.clone());
        let jitter: Vec<f64> = unit.iter().map(|v| v + 0.49 / 255.0).collect();
        prop_assert_eq!(GrayImage::from_unit(w, h, &jitter).unwrap(), img);
    }

    #[test]
    fn perturbations_keep_size_and_are_seeded(
        w in 16usize..48,
        h in 16usize..48,
        seed in any::<u64>(),
        kind in prop::sample::select(PerturbKind::ALL.to_vec()),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px: Vec<u8> = (0..w * h).map(|_| rand::Rng::random(&mut rng)).collect();
        let img = GrayImage::new(w, h, px).unwrap();
        let a = perturb(&img, kind, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = perturb(&img, kind, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!((a.width(), a.height()), (w, h));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn fused_maps_align_at_every_scale() {
    for s in [32usize, 64, 224] {
        let cfg = ModelConfig::with_scale(s);
        let w = cfg.base_channels;
        let p = ModelParams::<f64>::init(&cfg, 1).unwrap();
        let large = wavelet_enhanced_stem(&p, "stem.large", &rand_t(&[1, 1, 2 * s, 2 * s], 1)).unwrap();
        let base = wavelet_enhanced_stem(&p, "stem.base", &rand_t(&[1, 1, s, s], 2)).unwrap();
        let small = wavelet_enhanced_stem(&p, "stem.small", &rand_t(&[1, 1, s / 2, s / 2], 3)).unwrap();
        let spb1 = spatial_process_block(&p, "spb1", &large).unwrap();
        let spb2 = spatial_process_block(&p, "spb2", &base).unwrap();
        assert_eq!(large.shape(), [1, w, s, s], "S={s}");
        assert_eq!(spb1.shape(), base.shape(), "S={s}");
        assert_eq!(base.shape(), [1, w, s / 2, s / 2], "S={s}");
        assert_eq!(spb2.shape(), small.shape(), "S={s}");
        assert_eq!(small.shape(), [1, w, s / 4, s / 4], "S={s}");
        assert!(spb1.data().iter().chain(spb2.data()).all(|v| v.is_finite()));
    }
}

#[test]
fn grid_energy_heuristic_separates_toy_classes() {
    // grid-bin energy against its ring, one fixed threshold
    let mut correct = 0;
    let n = 200;
    for i in 0..n {
        for fake in [false, true] {
            let r = grid_peak_ratio(&toy_image(64, 21, ToySplit::Test, fake, i).unwrap()).unwrap();
            if (r >= 4.0) == fake {
                correct += 1;
            }
        }
    }
    let acc = 100.0 * correct as f64 / (2 * n) as f64;
    assert!(acc >= 90.0, "heuristic accuracy {acc}");
}
