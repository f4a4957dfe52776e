use std::sync::OnceLock;

use inpaint_core::autodiff::Tensor;
use inpaint_core::blend::{overlay, poisson_blend, poisson_blend_raw};
use inpaint_core::data::Image;
use inpaint_core::eval::{psnr, ssim};
use inpaint_core::gan::{BnMode, Checkpoint, GanConfig};
use inpaint_core::inpaint::importance_weights;
use inpaint_core::mask::{Mask, MaskSpec};
use proptest::prelude::*;

fn model() -> &'static Checkpoint {
    static CK: OnceLock<Checkpoint> = OnceLock::new();
    CK.get_or_init(|| {
        let mut ck = Checkpoint::init(&GanConfig {
            image_size: 16,
            latent_dim: 8,
            base_feature_maps: 8,
            ..GanConfig::default()
        })
        .unwrap();
        // Scale the weights up so outputs reach the tanh/sigmoid tails.
        for p in ck.generator.params_mut().iter_mut().chain(ck.discriminator.params_mut()) {
            p.value.data_mut().iter_mut().for_each(|v| *v *= 40.0);
        }
        ck
    })
}

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-1.0f64..=1.0, c * h * w)
        .prop_map(move |d| Image::new(c, h, w, d).unwrap())
}

/// Masks with at least one known and one missing pixel.
fn mask(h: usize, w: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(0u8..=1, h * w).prop_map(move |mut bits| {
        bits[0] = 1;
        bits[h * w - 1] = 0;
        Mask::new(h, w, bits).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generator_output_in_range(z in prop::collection::vec(-1.0f64..=1.0, 16)) {
        let ck = model();
        let z = Tensor::new(&[2, 8], z).unwrap();
        for mode in [BnMode::Inference, BnMode::Train] {
            let mut g = inpaint_core::autodiff::Graph::new();
            let vars = ck.generator.bind(&mut g, false).unwrap();
            let zv = g.constant(z.clone()).unwrap();
            let (x, _) = ck.generator.forward(&mut g, &vars, zv, mode).unwrap();
            prop_assert!(g.value(x).data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let a = ck.generator.generate(&z, BnMode::Inference).unwrap();
        let b = ck.generator.generate(&z, BnMode::Inference).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn discriminator_strictly_inside_unit_interval(x in image(1, 16, 16), y in image(1, 16, 16)) {
        let mut d = x.into_data();
        d.extend(y.into_data());
        let scores = model().discriminator.score(&Tensor::new(&[2, 1, 16, 16], d).unwrap()).unwrap();
        prop_assert!(scores.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn weights_bounded_and_zero_on_holes(m in mask(9, 12), half in 0usize..4) {
        let w = importance_weights(&m, 2 * half + 1).unwrap();
        for (v, &b) in w.values().iter().zip(m.bits()) {
            prop_assert!((0.0..=1.0).contains(v));
            if b == 0 {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn psnr_symmetric_and_ssim_bounded(a in image(2, 12, 12), b in image(2, 12, 12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlay_and_blend_keep_known_pixels(
        y in image(2, 8, 10),
        g in image(2, 8, 10),
        m in mask(8, 10),
    ) {
        let o = overlay(&y, &m, &g).unwrap();
        let raw = poisson_blend_raw(&y, &m, &g, None).unwrap();
        let b = poisson_blend(&y, &m, &g).unwrap();
        for c in 0..2 {
            for i in 0..80 {
                let k = c * 80 + i;
                if m.bits()[i] == 1 {
                    prop_assert_eq!(o.data()[k].to_bits(), y.data()[k].to_bits());
                    prop_assert_eq!(raw.data[k].to_bits(), y.data()[k].to_bits());
                    prop_assert_eq!(b.data()[k].to_bits(), y.data()[k].to_bits());
                } else {
                    prop_assert_eq!(o.data()[k], g.data()[k]);
                }
            }
        }
        prop_assert!(b.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn blend_with_consistent_guide_is_overlay(y in image(1, 8, 8), m in mask(8, 8)) {
        let b = poisson_blend(&y, &m, &y).unwrap();
        for (u, v) in b.data().iter().zip(y.data()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_masks_are_valid_and_deterministic(
        seed in any::<u64>(),
        h in 8usize..40,
        w in 8usize..40,
        f in 0.1f64..0.9,
    ) {
        let specs = [
            MaskSpec::Center { hole_fraction: 0.5 },
            MaskSpec::Random { missing_fraction: f },
            MaskSpec::Pattern { target_missing: 0.25 },
            MaskSpec::Half,
        ];
        for spec in specs {
            let m = spec.generate(h, w, seed).unwrap();
            prop_assert!(m.validate_for_inpainting().is_ok());
            prop_assert_eq!(&m, &spec.generate(h, w, seed).unwrap());
        }
        let random = specs[1].generate(h, w, seed).unwrap();
        prop_assert_eq!(random.missing_count(), ((h * w) as f64 * f).floor() as usize);
        let half = specs[3].generate(h, w, seed).unwrap();
        let n = half.missing_count();
        prop_assert!(n == (h / 2) * w || n == h * (w / 2));
    }
}
