use std::path::Path;
use std::process::{Command, Output};

use inpaint_cli::RunManifest;
use inpaint_core::data::load_image;
use inpaint_core::eval::EvalReport;
use inpaint_core::gan::{Checkpoint, GanConfig};
use inpaint_core::mask::Mask;

fn inpaint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inpaint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = inpaint(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    inpaint(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn same_outputs(a: &Path, b: &Path) {
    let (ma, mb) = (RunManifest::load(a).unwrap(), RunManifest::load(b).unwrap());
    assert!(!ma.outputs.is_empty());
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(ma.config, mb.config);
}

/// A small dataset and a briefly trained model shared by several tests.
fn fixture(dir: &Path) {
    let data = dir.join("data");
    ok(&["gen-data", "--count", "64", "--size", "16", "--seed", "3", "--out", p(&data)]);
    ok(&["gen-data", "--count", "4", "--size", "16", "--seed", "9", "--out", p(&dir.join("test"))]);
    ok(&[
        "train", "--data", p(&data), "--out", p(&dir.join("g.ckpt")), "--epochs", "2",
        "--batch-size", "16", "--latent-dim", "8", "--feature-maps", "8",
    ]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = inpaint(&["gen-data", "--family", "plaid", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("toy_faces") && err.contains("digits_grid") && err.contains("blobs"));
    assert_eq!(code(&["train", "--data", p(&dir.path().join("none")), "--out", "x.ckpt"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["make-mask", "--family", "half", "--fraction", "0.3", "--out", "m.png"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--family", "toy_faces", "--count", "100", "--size", "32", "--seed", "7", "--out", p(d)]);
    }
    let pngs = std::fs::read_dir(&a).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
    });
    assert_eq!(pngs.count(), 100);
    same_outputs(&a.join("run_manifest.json"), &b.join("run_manifest.json"));
}

#[test]
fn train_resume_and_zero_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["gen-data", "--count", "48", "--size", "16", "--seed", "1", "--out", p(&data)]);
    let common = ["--batch-size", "16", "--latent-dim", "8", "--feature-maps", "8", "--seed", "4"];
    let train = |out: &Path, extra: &[&str]| {
        let mut args = vec!["train", "--data", p(&data), "--out", p(out)];
        args.extend(common);
        args.extend(extra);
        ok(&args);
    };

    train(&d.join("zero.ckpt"), &["--epochs", "0"]);
    let zero = Checkpoint::load(&d.join("zero.ckpt")).unwrap();
    let cfg = GanConfig {
        image_size: 16,
        latent_dim: 8,
        base_feature_maps: 8,
        batch_size: 16,
        seed: 4,
        epochs: 0,
        ..GanConfig::default()
    };
    assert_eq!(zero.to_bytes(), Checkpoint::init(&cfg).unwrap().to_bytes());

    train(&d.join("full.ckpt"), &["--epochs", "3"]);
    train(&d.join("part.ckpt"), &["--epochs", "1"]);
    train(&d.join("part.ckpt"), &["--epochs", "3", "--resume"]);
    let full = std::fs::read(d.join("full.ckpt")).unwrap();
    assert_eq!(full, std::fs::read(d.join("part.ckpt")).unwrap());

    let lines = |f: &str| std::fs::read_to_string(d.join(f)).unwrap().lines().count();
    assert_eq!(lines("full.ckpt.metrics.jsonl"), 3);
    assert_eq!(lines("part.ckpt.metrics.jsonl"), 3);
    let strip = |f: &str| -> Vec<serde_json::Value> {
        std::fs::read_to_string(d.join(f))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_ms");
                v
            })
            .collect()
    };
    assert_eq!(strip("full.ckpt.metrics.jsonl"), strip("part.ckpt.metrics.jsonl"));

    train(&d.join("again.ckpt"), &["--epochs", "3"]);
    assert_eq!(full, std::fs::read(d.join("again.ckpt")).unwrap());
    assert_eq!(
        code(&["train", "--data", p(&data), "--out", p(&d.join("full.ckpt")), "--resume", "--lr", "0.1"]),
        2
    );
}

#[test]
fn make_mask_writes_requested_family() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.png");
    ok(&["make-mask", "--family", "random", "--fraction", "0.8", "--seed", "2", "--out", p(&m)]);
    assert_eq!(Mask::load(&m).unwrap().missing_count(), 819);
    ok(&["make-mask", "--family", "half", "--size", "20", "--out", p(&m)]);
    assert_eq!(Mask::load(&m).unwrap().missing_count(), 200);
}

#[test]
fn inpaint_outputs_modes_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let (ck, test) = (d.join("g.ckpt"), d.join("test"));
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "inpaint", "--checkpoint", p(&ck), "--data", p(&test),
            "--limit", "2", "--iterations", "15", "--restarts", "2", "--seed", "5",
        ];
        let out = d.join(out);
        args.extend(["--out", p(&out)]);
        args.extend(extra);
        ok(&args);
        out
    };
    let blend = run("blend", &[]);
    let again = run("again", &[]);
    same_outputs(&blend.join("run_manifest.json"), &again.join("run_manifest.json"));
    for f in ["corrupted.png", "mask.png", "generated.png", "result.png", "trajectory.jsonl", "manifest.json"] {
        assert!(blend.join("00000").join(f).exists(), "{f}");
    }

    let over = run("overlay", &["--mode", "overlay", "--mask-family", "random"]);
    let truth = load_image(&d.join("test").join("00000.png")).unwrap();
    let mask = Mask::load(&over.join("00000/mask.png")).unwrap();
    let result = load_image(&over.join("00000/result.png")).unwrap();
    for i in 0..256 {
        if mask.bits()[i] == 1 {
            assert_eq!(result.data()[i], truth.data()[i]);
        }
    }

    let ablation = run("noprior", &["--no-prior"]);
    let traj = std::fs::read_to_string(ablation.join("00001/trajectory.jsonl")).unwrap();
    assert_eq!(traj.lines().count(), 15);
    for line in traj.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["prior"].as_f64(), Some(0.0));
    }
}

#[test]
fn inpaint_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    ok(&["gen-data", "--count", "1", "--size", "32", "--out", p(&d.join("big"))]);
    let out = inpaint(&[
        "inpaint", "--checkpoint", p(&d.join("g.ckpt")), "--image", p(&d.join("big/00000.png")),
        "--out", p(&d.join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("(1, 32, 32)") && err.contains("(1, 16, 16)"), "{err}");
}

#[test]
fn evaluate_report_is_complete_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let eval = |out: &str| {
        let out = d.join(out);
        ok(&[
            "evaluate", "--checkpoint", p(&d.join("g.ckpt")), "--test", p(&d.join("test")),
            "--train", p(&d.join("data")), "--families", "center,half", "--iterations", "5",
            "--restarts", "1", "--seed", "2", "--out", p(&out),
        ]);
        out
    };
    let a = eval("a.json");
    let b = eval("b.json");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report: EvalReport = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 8);
    for cell in report.cells.values() {
        let n = cell.psnr.len() as f64;
        assert_eq!(n, 4.0);
        let mean = cell.psnr.iter().sum::<f64>() / n;
        assert!((mean - cell.mean_psnr.unwrap()).abs() < 1e-12);
        let mean = cell.ssim.iter().sum::<f64>() / n;
        assert!((mean - cell.mean_ssim.unwrap()).abs() < 1e-12);
    }
    assert_eq!(
        code(&[
            "evaluate", "--checkpoint", p(&d.join("g.ckpt")), "--test", p(&d.join("test")),
            "--methods", "nn_fill", "--out", p(&d.join("c.json")),
        ]),
        2
    );
}

#[test]
fn grad_check_gates_on_tolerance() {
    let out = ok(&["grad-check", "--points", "3"]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("conv2d") && table.contains("total_loss(z)"));
    assert!(!table.contains("FAIL"));
    let out = inpaint(&["grad-check", "--points", "2", "--inject-broken", "tanh"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tanh"));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "data.count = 5\ndata.image_size = 16\n").unwrap();
    ok(&["--config", p(&cfg), "gen-data", "--out", p(&d.join("a"))]);
    ok(&["--config", p(&cfg), "gen-data", "--count", "3", "--out", p(&d.join("b"))]);
    let count = |s: &str| {
        let m = RunManifest::load(&d.join(s).join("run_manifest.json")).unwrap();
        (m.config["count"].as_u64().unwrap(), m.config["image_size"].as_u64().unwrap())
    };
    assert_eq!(count("a"), (5, 16));
    assert_eq!(count("b"), (3, 16));
    std::fs::write(&cfg, "data.colour = 2\n").unwrap();
    assert_eq!(code(&["--config", p(&cfg), "gen-data", "--out", p(&d.join("c"))]), 2);
}
