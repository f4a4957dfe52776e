use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context as _};
use clap::Args as ClapArgs;
use inpaint_core::data::{load_dataset, MANIFEST_FILE};
use inpaint_core::gan::{Checkpoint, GanConfig};
use serde_json::Value;

use super::elapsed_ms;
use crate::config::{flag, resolve};
use crate::manifest::RunManifest;
use crate::{CliError, CliResult, Context};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file to write (and to resume from with --resume).
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log (JSON lines); defaults to `<out>.metrics.jsonl`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Continue from the checkpoint at --out until --epochs are complete.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Feature maps of the first discriminator layer.
    #[arg(long)]
    pub feature_maps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable random horizontal flips.
    #[arg(long)]
    pub no_flip: bool,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(ctx: &Context, args: Args) -> CliResult {
    let start = Instant::now();
    if !args.data.join(MANIFEST_FILE).exists() {
        return Err(CliError::usage(anyhow!(
            "no dataset at {} (missing {MANIFEST_FILE})",
            args.data.display()
        )));
    }
    let (manifest, images) = load_dataset(&args.data)?;
    let resumed = if args.resume && args.out.exists() {
        Some(Checkpoint::load(&args.out)?)
    } else {
        None
    };
    let base = match &resumed {
        Some(ck) => ck.config.clone(),
        None => GanConfig {
            image_size: manifest.spec.image_size,
            channels: manifest.spec.channels,
            ..GanConfig::default()
        },
    };
    let config: GanConfig = resolve(
        &base,
        "gan",
        ctx.config.as_ref(),
        &[
            ("epochs", flag(&args.epochs)),
            ("batch_size", flag(&args.batch_size)),
            ("lr", flag(&args.lr)),
            ("beta1", flag(&args.beta1)),
            ("beta2", flag(&args.beta2)),
            ("latent_dim", flag(&args.latent_dim)),
            ("base_feature_maps", flag(&args.feature_maps)),
            ("seed", flag(&args.seed)),
            ("flip_augmentation", args.no_flip.then_some(Value::Bool(false))),
        ],
    )
    .map_err(CliError::usage)?;
    config.validate()?;
    if (config.image_size, config.channels) != (manifest.spec.image_size, manifest.spec.channels) {
        return Err(CliError::usage(anyhow!(
            "model expects {}x{}x{} images but the dataset holds {}x{}x{}",
            config.channels,
            config.image_size,
            config.image_size,
            manifest.spec.channels,
            manifest.spec.image_size,
            manifest.spec.image_size
        )));
    }
    if config.epochs > 0 && config.batch_size > images.len() {
        return Err(CliError::usage(anyhow!(
            "batch_size {} exceeds the dataset size {}",
            config.batch_size,
            images.len()
        )));
    }
    let mut ck = match resumed {
        Some(mut ck) => {
            let frozen = GanConfig {
                epochs: ck.config.epochs,
                ..config.clone()
            };
            if frozen != ck.config {
                return Err(CliError::usage(anyhow!(
                    "only the epoch count may change when resuming; checkpoint has {:?}",
                    ck.config
                )));
            }
            ck.config.epochs = config.epochs;
            ck
        }
        None => Checkpoint::init(&config)?,
    };

    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".metrics.jsonl"));
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        super::create_dir(dir)?;
    }
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume)
        .truncate(!args.resume)
        .open(&metrics_path)
        .with_context(|| format!("cannot open {}", metrics_path.display()))
        .map_err(CliError::usage)?;
    ck.save(&args.out)?;
    let from = ck.epoch;
    ck.train(&images, |c, m| {
        writeln!(log, "{}", serde_json::to_string(m)?)?;
        c.save(&args.out)?;
        eprintln!(
            "epoch {}: d_loss {:.4} g_loss {:.4} d_accuracy {:.3} ({} ms)",
            m.epoch, m.d_loss, m.g_loss, m.d_accuracy, m.wall_time_ms
        );
        Ok(())
    })?;

    let mut run = RunManifest::new("train", serde_json::to_value(&ck.config).map_err(CliError::failure)?, ctx.threads);
    run.seeds.insert("gan".into(), ck.config.seed);
    run.input(&args.data.join(MANIFEST_FILE))?;
    if let Some(parent) = args.out.parent() {
        // The metrics log carries wall time and is left unhashed.
        run.output(parent, &args.out)?;
    }
    run.wall_time_ms = elapsed_ms(start);
    run.write(&with_suffix(&args.out, ".run.json"))?;
    println!(
        "trained epochs {}..{} on {} images; checkpoint {}",
        from,
        ck.epoch,
        images.len(),
        args.out.display()
    );
    Ok(())
}
