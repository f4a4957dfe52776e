use inpaint_core::data::{generate_dataset, DatasetSpec, Family, Image};
use inpaint_core::eval::{
    error_map, evaluate, gaussian_taps, mean_fill, mse, psnr, ssim, EvalOptions, Method,
};
use inpaint_core::gan::{Checkpoint, GanConfig};
use inpaint_core::inpaint::InpaintConfig;
use inpaint_core::mask::{random_mask, MaskFamily};
use inpaint_core::rng::stream;
use rand::Rng;

fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
    let mut rng = stream(seed, "metrics-oracle");
    Image::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn mse_and_psnr_match_scalar_loop() {
    let (a, b) = (random_image(1, 3, 8, 9), random_image(2, 3, 8, 9));
    let mut s = 0.0;
    for c in 0..3 {
        for r in 0..8 {
            for k in 0..9 {
                let d = (a.get(c, r, k) - b.get(c, r, k)) / 2.0;
                s += d * d;
            }
        }
    }
    let m = s / 216.0;
    assert!((mse(&a, &b).unwrap() - m).abs() < 1e-12);
    assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-12);
    assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() == 0.0);
}

/// Direct windowed SSIM with 2-D Gaussian weights and centred moments.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let g = gaussian_taps();
    let k = g.len();
    let (c1, c2) = (1e-4, 9e-4);
    let (ch, h, w) = a.dims();
    let mut total = 0.0;
    for c in 0..ch {
        let mut s = 0.0;
        let mut n = 0;
        for r0 in 0..=h - k {
            for q0 in 0..=w - k {
                let px = |im: &Image, i: usize, j: usize| (im.get(c, r0 + i, q0 + j) + 1.0) / 2.0;
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        mx += g[i] * g[j] * px(a, i, j);
                        my += g[i] * g[j] * px(b, i, j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let (dx, dy) = (px(a, i, j) - mx, px(b, i, j) - my);
                        vx += g[i] * g[j] * dx * dx;
                        vy += g[i] * g[j] * dy * dy;
                        cov += g[i] * g[j] * dx * dy;
                    }
                }
                s += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
        total += s / n as f64;
    }
    total / ch as f64
}

#[test]
fn ssim_matches_direct_windowed_formula() {
    let a = random_image(3, 1, 16, 16);
    let b = Image::clamped(
        1,
        16,
        16,
        a.data().iter().zip(random_image(4, 1, 16, 16).data()).map(|(x, n)| x + 0.3 * n).collect(),
    )
    .unwrap();
    assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-10);
    let (c, d) = (random_image(5, 3, 13, 17), random_image(6, 3, 13, 17));
    assert!((ssim(&c, &d).unwrap() - ssim_direct(&c, &d)).abs() < 1e-10);
}

#[test]
fn mean_fill_matches_loop() {
    let y = random_image(7, 2, 10, 10);
    let mask = random_mask(10, 10, 0.4, 7).unwrap();
    let out = mean_fill(&y, &mask).unwrap();
    for c in 0..2 {
        let (mut s, mut n) = (0.0, 0.0);
        for r in 0..10 {
            for k in 0..10 {
                if mask.is_known(r, k) {
                    s += y.get(c, r, k);
                    n += 1.0;
                }
            }
        }
        for r in 0..10 {
            for k in 0..10 {
                let want = if mask.is_known(r, k) { y.get(c, r, k) } else { s / n };
                assert!((out.get(c, r, k) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn error_map_clamps_where_gain_saturates() {
    let (a, b) = (random_image(8, 1, 6, 6), random_image(9, 1, 6, 6));
    for gain in [0.5, 2.0, 8.0] {
        let m = error_map(&a, &b, gain).unwrap();
        for (i, v) in m.iter().enumerate() {
            let d = gain * (a.data()[i] - b.data()[i]).abs() / 2.0;
            if d > 1.0 {
                assert_eq!(*v, 1.0);
            } else {
                assert!((v - d).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn report_cells_and_aggregates() {
    let images = generate_dataset(&DatasetSpec {
        family: Family::ToyFaces,
        count: 12,
        image_size: 16,
        channels: 1,
        seed: 1,
    })
    .unwrap();
    let (train, test) = images.split_at(8);
    let ck = Checkpoint::init(&GanConfig {
        image_size: 16,
        latent_dim: 8,
        base_feature_maps: 4,
        ..GanConfig::default()
    })
    .unwrap();
    let options = EvalOptions {
        masks: [MaskFamily::Center, MaskFamily::Random]
            .iter()
            .map(|f| f.default_spec())
            .collect(),
        methods: Method::ALL.to_vec(),
        inpaint: InpaintConfig {
            iterations: 5,
            restarts: 2,
            ..InpaintConfig::default()
        },
        seed: 3,
    };
    let ev = evaluate(test, train, &ck.generator, &ck.discriminator, &options).unwrap();
    assert_eq!(ev.report.cells.len(), 8);
    for method in Method::ALL {
        for family in [MaskFamily::Center, MaskFamily::Random] {
            let cell = ev.report.cell(method, family).unwrap();
            assert!(cell.error.is_none());
            assert_eq!(cell.psnr.len(), 4);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!((cell.mean_psnr.unwrap() - mean(&cell.psnr)).abs() < 1e-12);
            assert!((cell.mean_ssim.unwrap() - mean(&cell.ssim)).abs() < 1e-12);
            assert!((cell.mean_psnr_hole.unwrap() - mean(&cell.psnr_hole)).abs() < 1e-12);
        }
    }
    let again = evaluate(test, train, &ck.generator, &ck.discriminator, &options).unwrap();
    assert_eq!(again.report, ev.report);
    let parsed: inpaint_core::eval::EvalReport = serde_json::from_str(&ev.report.to_json()).unwrap();
    assert_eq!(parsed, ev.report);
}
