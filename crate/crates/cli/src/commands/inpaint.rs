use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use clap::Args as ClapArgs;
use inpaint_core::blend::{finish, BlendMode};
use inpaint_core::data::{load_dataset, load_image, save_image, Image};
use inpaint_core::eval::{inpaint_seed, mask_seed};
use inpaint_core::gan::Checkpoint;
use inpaint_core::inpaint::{invert_batch, InpaintJob};
use inpaint_core::mask::{Mask, MaskFamily};
use serde_json::json;

use super::{create_dir, elapsed_ms, mask_spec, resolve_mask, InpaintFlags};
use crate::manifest::{RunManifest, RUN_MANIFEST_FILE};
use crate::{CliError, CliResult, Context};

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input image(s); the mask is applied to them before inversion.
    #[arg(long = "image", num_args = 1..)]
    pub images: Vec<PathBuf>,
    /// Dataset directory to take inputs from instead of --image.
    #[arg(long, conflicts_with = "images")]
    pub data: Option<PathBuf>,
    /// Use only the first N dataset images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Mask PNG applied to every input; otherwise masks are generated.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Generated mask family: center, pattern, random or half.
    #[arg(long, conflicts_with = "mask")]
    pub mask_family: Option<String>,
    /// Hole side fraction (center) or missing fraction (pattern, random).
    #[arg(long, conflicts_with = "mask")]
    pub mask_fraction: Option<f64>,
    /// overlay or blend.
    #[arg(long, default_value = "blend")]
    pub mode: BlendMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub inpaint: InpaintFlags,
    /// Output directory; one subdirectory per input image.
    #[arg(long)]
    pub out: PathBuf,
}

fn stem(path: &Path, index: usize) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("{index:05}"))
}

pub fn run(ctx: &Context, args: Args) -> CliResult {
    let start = Instant::now();
    let ck = Checkpoint::load(&args.checkpoint)?;
    let config = args.inpaint.resolve(ctx, args.seed)?;

    let mut inputs: Vec<(String, Image)> = Vec::new();
    let mut run = RunManifest::new("inpaint", serde_json::Value::Null, ctx.threads);
    run.input(&args.checkpoint)?;
    if let Some(dir) = &args.data {
        let (manifest, images) = load_dataset(dir)?;
        let n = args.limit.unwrap_or(images.len()).min(images.len());
        for (f, im) in manifest.files.iter().zip(images).take(n) {
            inputs.push((stem(Path::new(&f.name), inputs.len()), im));
            run.input(&dir.join(&f.name))?;
        }
    } else {
        for (i, p) in args.images.iter().enumerate() {
            inputs.push((stem(p, i), load_image(p)?));
            run.input(p)?;
        }
    }
    if inputs.is_empty() {
        return Err(CliError::usage(anyhow!("no input images; pass --image or --data")));
    }
    let gc = &ck.config;
    let want = (gc.channels, gc.image_size, gc.image_size);
    for (name, im) in &inputs {
        if im.dims() != want {
            return Err(CliError::usage(anyhow!(
                "image {name} has shape {:?} (channels, height, width) but the model expects {:?}",
                im.dims(),
                want
            )));
        }
    }

    let (family, masks, mask_desc) = match &args.mask {
        Some(p) => {
            let m = Mask::load(p)?;
            run.input(p)?;
            let desc = json!({ "file": p.display().to_string() });
            (None, vec![m; inputs.len()], desc)
        }
        None => {
            let (family, fraction) =
                resolve_mask(ctx, args.mask_family.as_deref(), args.mask_fraction)?;
            let spec = mask_spec(family, fraction)?;
            let masks = (0..inputs.len())
                .map(|i| spec.generate(want.1, want.2, mask_seed(args.seed, family, i)))
                .collect::<Result<Vec<_>, _>>()?;
            (Some(family), masks, serde_json::to_value(spec).map_err(CliError::failure)?)
        }
    };
    for (m, (name, _)) in masks.iter().zip(&inputs) {
        if (m.height(), m.width()) != (want.1, want.2) {
            return Err(CliError::usage(anyhow!(
                "mask is {}x{} but image {name} is {}x{}",
                m.height(),
                m.width(),
                want.1,
                want.2
            )));
        }
        m.validate_for_inpainting()?;
    }
    let corrupted = inputs
        .iter()
        .zip(&masks)
        .map(|((_, im), m)| m.corrupt(im))
        .collect::<Result<Vec<_>, _>>()?;
    let seed_family = family.unwrap_or(MaskFamily::Center);
    let jobs: Vec<InpaintJob> = corrupted
        .iter()
        .zip(&masks)
        .enumerate()
        .map(|(i, (y, m))| InpaintJob {
            corrupted: y,
            mask: m,
            seed: inpaint_seed(args.seed, seed_family, i),
        })
        .collect();
    let results = invert_batch(&jobs, &ck.generator, &ck.discriminator, &config)?;

    create_dir(&args.out)?;
    let mut failures = Vec::new();
    for (i, (((name, _), result), job)) in inputs.iter().zip(results).zip(&jobs).enumerate() {
        let dir = args.out.join(name);
        create_dir(&dir)?;
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{name}: {e}");
                failures.push(name.clone());
                continue;
            }
        };
        let out = finish(job.corrupted, job.mask, &result.generated, args.mode)?;
        let files = [
            ("corrupted.png", Some(job.corrupted)),
            ("generated.png", Some(&result.generated)),
            ("result.png", Some(&out)),
            ("mask.png", None),
        ];
        for (file, img) in files {
            let path = dir.join(file);
            match img {
                Some(im) => save_image(&path, im)?,
                None => job.mask.save(&path)?,
            }
            run.output(&args.out, &path)?;
        }
        let traj = dir.join("trajectory.jsonl");
        std::fs::write(&traj, result.trajectory_json_lines()).map_err(CliError::usage)?;
        run.output(&args.out, &traj)?;
        let per_image = json!({
            "image": name,
            "mode": args.mode.name(),
            "mask_seed": family.map(|f| mask_seed(args.seed, f, i)),
            "inpaint_seed": job.seed,
            "restart": result.restart,
            "restart_losses": result.restart_losses,
            "final_loss": result.final_loss,
            "d_score": result.d_score,
            "z_hat": result.z_hat,
            "wall_time_ms": result.wall_time_ms,
        });
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&per_image).map_err(CliError::failure)? + "\n")
            .map_err(CliError::usage)?;
        // Not hashed: it carries wall time, like the run manifest itself.
        println!(
            "{name}: restart {} total loss {:.5} D(G(z)) {:.4}",
            result.restart, result.final_loss.total, result.d_score
        );
    }
    run.config = json!({ "inpaint": config, "mode": args.mode.name(), "mask": mask_desc, "seed": args.seed });
    run.seeds.insert("master".into(), args.seed);
    run.wall_time_ms = elapsed_ms(start);
    run.write(&args.out.join(RUN_MANIFEST_FILE))?;
    if !failures.is_empty() {
        return Err(CliError::failure(anyhow!(
            "inversion failed for {}",
            failures.join(", ")
        )));
    }
    Ok(())
}
