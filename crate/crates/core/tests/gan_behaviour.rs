use inpaint_core::autodiff::Tensor;
use inpaint_core::data::{generate_dataset, DatasetSpec, Family};
use inpaint_core::gan::{sample_latent, train, BnMode, Checkpoint, GanConfig};
use inpaint_core::rng::stream;
use rand::Rng;

/// Recorded from the first build: untrained default generator, seed 0.
const GOLDEN: [(usize, f64); 8] = [
    (0, -8.763555992621504e-5),
    (1, -0.00026484177077350576),
    (100, 0.0007726575193614839),
    (517, -0.0009567167482896929),
    (1023, -0.00019209219601347698),
    (1024, -3.7798482337607768e-6),
    (1500, -0.0002737750767264312),
    (2047, -9.614301959119464e-5),
];
const GOLDEN_SUM: f64 = -0.5093268994920065;

#[test]
fn untrained_generator_matches_snapshot() {
    let ck = Checkpoint::init(&GanConfig::default()).unwrap();
    let z = sample_latent(&mut stream(0, "golden"), 2, 64);
    let out = ck.generator.generate(&z, BnMode::Inference).unwrap();
    assert_eq!(out.shape(), &[2, 1, 32, 32]);
    let d = out.data();
    for (i, v) in GOLDEN {
        assert!((d[i] - v).abs() <= 1e-9 * v.abs().max(1e-6), "pixel {i}: {} vs {v}", d[i]);
    }
    let sum: f64 = d.iter().sum();
    assert!((sum - GOLDEN_SUM).abs() < 1e-9);
}

#[test]
fn even_odds_discriminator_gives_two_log_two() {
    let cfg = GanConfig {
        image_size: 16,
        latent_dim: 8,
        base_feature_maps: 4,
        batch_size: 4,
        ..GanConfig::default()
    };
    let mut ck = Checkpoint::init(&cfg).unwrap();
    for p in ck.discriminator.params_mut() {
        if p.name.starts_with("disc.head") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let real = Tensor::from_fn(&[4, 1, 16, 16], |i| ((i % 7) as f64 - 3.0) / 3.0);
    let m = ck.train_step(&real).unwrap();
    assert!((m.d_loss - 2.0 * 2f64.ln()).abs() < 1e-12, "{}", m.d_loss);
}

#[test]
fn two_value_toy_accuracy_rises_then_falls() {
    let cfg = GanConfig {
        image_size: 16,
        latent_dim: 8,
        base_feature_maps: 16,
        batch_size: 32,
        ..GanConfig::default()
    };
    let mut ck = Checkpoint::init(&cfg).unwrap();
    let mut rng = stream(1, "toy");
    let mut acc = Vec::new();
    for _ in 0..200 {
        let v: Vec<f64> = (0..32).map(|_| if rng.random_bool(0.5) { 0.6 } else { -0.6 }).collect();
        let real = Tensor::new(&[32, 1, 16, 16], (0..32 * 256).map(|i| v[i / 256]).collect()).unwrap();
        acc.push(ck.train_step(&real).unwrap().d_accuracy);
    }
    let early = acc[..40].iter().cloned().fold(0.0, f64::max);
    let late = acc[160..].iter().sum::<f64>() / 40.0;
    assert!(early >= 0.95, "early max accuracy {early}");
    assert!(late <= 0.75, "late mean accuracy {late}");
}

#[test]
fn metrics_are_reproducible_and_generator_not_collapsed() {
    let images = generate_dataset(&DatasetSpec {
        family: Family::ToyFaces,
        count: 256,
        image_size: 16,
        channels: 1,
        seed: 2,
    })
    .unwrap();
    let cfg = GanConfig {
        image_size: 16,
        latent_dim: 16,
        base_feature_maps: 16,
        batch_size: 32,
        epochs: 4,
        ..GanConfig::default()
    };
    let (a, ma) = train(&cfg, &images).unwrap();
    let (b, mb) = train(&cfg, &images).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let strip = |m: &[inpaint_core::gan::EpochMetrics]| {
        m.iter().map(|e| (e.epoch, e.d_loss, e.g_loss, e.d_accuracy)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&ma), strip(&mb));
    assert_eq!(ma.iter().map(|e| e.epoch).collect::<Vec<_>>(), [1, 2, 3, 4]);
    assert!(ma.last().unwrap().d_accuracy < 0.95);
}
