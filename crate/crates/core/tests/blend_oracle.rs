use inpaint_core::blend::{overlay, poisson_blend, poisson_blend_raw, seam_energy, PoissonSystem};
use inpaint_core::data::{generate_dataset, DatasetSpec, Family, Image};
use inpaint_core::mask::{pattern_mask, random_mask, Mask, MaskFamily, MaskSpec};
use inpaint_core::rng::stream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image {
    Image::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Gaussian elimination with partial pivoting on a dense row-major system.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
            .unwrap();
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let piv = a[k * n + k];
        assert!(piv.abs() > 1e-12, "singular system");
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k * n + j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k * n + k];
    }
    x
}

fn instance(i: u64) -> (Image, Mask, Image) {
    let mut rng = stream(i, "blend-oracle");
    let mask = if i % 2 == 0 {
        random_mask(12, 12, rng.random_range(0.2..0.8), i).unwrap()
    } else {
        pattern_mask(12, 12, 0.3, i).unwrap()
    };
    let y = random_image(&mut rng, 1, 12, 12);
    let g = random_image(&mut rng, 1, 12, 12);
    (y, mask, g)
}

#[test]
fn cg_matches_dense_direct_solve() {
    for i in 0..50 {
        let (y, mask, g) = instance(i);
        let sys = PoissonSystem::new(&mask).unwrap();
        let b = sys.rhs(y.plane(0), g.plane(0));
        let direct = dense_solve(sys.dense(), b);
        let sol = poisson_blend_raw(&y, &mask, &g, None).unwrap();
        for (&p, d) in sys.pixels().iter().zip(&direct) {
            assert!((sol.data[p] - d).abs() <= 1e-6, "instance {i} pixel {p}");
        }
        for p in 0..144 {
            if mask.is_known(p / 12, p % 12) {
                assert_eq!(sol.data[p].to_bits(), y.data()[p].to_bits());
            }
        }
    }
}

#[test]
fn solution_is_independent_of_initial_guess() {
    for i in 0..50 {
        let (y, mask, g) = instance(i);
        let mut rng = stream(i, "blend-init");
        let init = random_image(&mut rng, 1, 12, 12);
        let a = poisson_blend_raw(&y, &mask, &g, None).unwrap();
        let b = poisson_blend_raw(&y, &mask, &g, Some(&init)).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() <= 1e-6);
        }
    }
}

#[test]
fn interior_laplacian_matches_guide() {
    let (h, w) = (24, 24);
    for i in 0..10 {
        let mut rng = stream(i, "laplacian");
        let mask = MaskFamily::Center.default_spec().generate(h, w, i).unwrap();
        let y = random_image(&mut rng, 1, h, w);
        let g = random_image(&mut rng, 1, h, w);
        let x = poisson_blend_raw(&y, &mask, &g, None).unwrap().data;
        let gd = g.data();
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                let nb = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)];
                if mask.is_known(r, c) || nb.iter().any(|&(a, b)| mask.is_known(a, b)) {
                    continue;
                }
                let lap = |v: &[f64]| {
                    nb.iter().map(|&(a, b)| v[r * w + c] - v[a * w + b]).sum::<f64>()
                };
                assert!((lap(&x) - lap(gd)).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn channels_are_blended_independently() {
    let mut rng = stream(5, "channels");
    let mask = random_mask(16, 16, 0.5, 5).unwrap();
    let y = random_image(&mut rng, 3, 16, 16);
    let g = random_image(&mut rng, 3, 16, 16);
    let joint = poisson_blend(&y, &mask, &g).unwrap();
    for c in 0..3 {
        let one = |im: &Image| Image::new(1, 16, 16, im.plane(c).to_vec()).unwrap();
        let solo = poisson_blend(&one(&y), &mask, &one(&g)).unwrap();
        assert_eq!(solo.data(), joint.plane(c));
    }
}

#[test]
fn checkerboard_overlay_selects_per_pixel() {
    let mut rng = stream(2, "checker");
    let mask = Mask::from_fn(9, 7, |r, c| (r + c) % 2 == 0);
    let y = random_image(&mut rng, 2, 9, 7);
    let g = random_image(&mut rng, 2, 9, 7);
    let out = overlay(&y, &mask, &g).unwrap();
    for ch in 0..2 {
        for r in 0..9 {
            for c in 0..7 {
                let want = if (r + c) % 2 == 0 { y.get(ch, r, c) } else { g.get(ch, r, c) };
                assert_eq!(out.get(ch, r, c), want);
            }
        }
    }
}

#[test]
fn blending_reduces_seams_on_toy_cases() {
    let faces = generate_dataset(&DatasetSpec {
        family: Family::ToyFaces,
        count: 100,
        image_size: 32,
        channels: 1,
        seed: 11,
    })
    .unwrap();
    let specs = [
        MaskSpec::Center { hole_fraction: 0.5 },
        MaskSpec::Pattern { target_missing: 0.25 },
        MaskSpec::Half,
    ];
    let mut wins = 0;
    for i in 0..50 {
        let mask = specs[i % 3].generate(32, 32, i as u64).unwrap();
        let (y, g) = (&faces[2 * i], &faces[2 * i + 1]);
        let over = seam_energy(&overlay(y, &mask, g).unwrap(), &mask).unwrap();
        let blend = seam_energy(&poisson_blend(y, &mask, g).unwrap(), &mask).unwrap();
        if blend <= over {
            wins += 1;
        }
    }
    assert!(wins >= 45, "blend seam <= overlay on {wins}/50");
}
