use std::path::PathBuf;
use std::time::Instant;

use anyhow::anyhow;
use clap::Args as ClapArgs;
use inpaint_core::data::{load_dataset, save_image, MANIFEST_FILE};
use inpaint_core::eval::{error_image, evaluate, EvalOptions, Method};
use inpaint_core::gan::Checkpoint;
use inpaint_core::mask::MaskFamily;
use serde_json::json;

use super::{create_dir, elapsed_ms, split_list, InpaintFlags};
use crate::manifest::RunManifest;
use crate::{CliError, CliResult, Context};

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out dataset directory.
    #[arg(long)]
    pub test: PathBuf,
    /// Training dataset directory, the reference set of nn_fill.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Use only the first N test images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Comma-separated mask families.
    #[arg(long, default_value = "center,pattern,random,half")]
    pub families: String,
    /// Comma-separated methods.
    #[arg(long, default_value = "ours_blend,ours_overlay,mean_fill,nn_fill")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub inpaint: InpaintFlags,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write masks, reconstructions and error images here.
    #[arg(long)]
    pub save_images: Option<PathBuf>,
}

pub fn run(ctx: &Context, args: Args) -> CliResult {
    let start = Instant::now();
    let families = split_list(&args.families)
        .into_iter()
        .map(str::parse::<MaskFamily>)
        .collect::<Result<Vec<_>, _>>()?;
    let methods = split_list(&args.methods)
        .into_iter()
        .map(str::parse::<Method>)
        .collect::<Result<Vec<_>, _>>()?;
    let inpaint = args.inpaint.resolve(ctx, args.seed)?;
    if methods.contains(&Method::NnFill) && args.train.is_none() {
        return Err(CliError::usage(anyhow!("nn_fill needs --train")));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (_, mut test) = load_dataset(&args.test)?;
    if let Some(n) = args.limit {
        test.truncate(n);
    }
    let train = match &args.train {
        Some(dir) => load_dataset(dir)?.1,
        None => Vec::new(),
    };
    let gc = &ck.config;
    let want = (gc.channels, gc.image_size, gc.image_size);
    if let Some(im) = test.iter().chain(&train).find(|im| im.dims() != want) {
        return Err(CliError::usage(anyhow!(
            "dataset images have shape {:?} (channels, height, width) but the model expects {:?}",
            im.dims(),
            want
        )));
    }
    let options = EvalOptions {
        masks: families.iter().map(|f| f.default_spec()).collect(),
        methods,
        inpaint,
        seed: args.seed,
    };
    let ev = evaluate(&test, &train, &ck.generator, &ck.discriminator, &options)?;

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(&args.out, ev.report.to_json() + "\n").map_err(CliError::usage)?;
    let base = args.out.parent().map(PathBuf::from).unwrap_or_default();
    let mut run = RunManifest::new(
        "evaluate",
        json!({ "masks": options.masks, "methods": options.methods, "inpaint": options.inpaint, "seed": args.seed }),
        ctx.threads,
    );
    run.seeds.insert("master".into(), args.seed);
    run.input(&args.checkpoint)?;
    run.input(&args.test.join(MANIFEST_FILE))?;
    if let Some(dir) = &args.train {
        run.input(&dir.join(MANIFEST_FILE))?;
    }
    run.output(&base, &args.out)?;

    if let Some(dir) = &args.save_images {
        for (family, masks) in &ev.masks {
            let fdir = dir.join(family.name());
            create_dir(&fdir)?;
            for (i, m) in masks.iter().enumerate() {
                let p = fdir.join(format!("{i:05}_mask.png"));
                m.save(&p)?;
                run.output(&base, &p)?;
            }
            for &method in &options.methods {
                let key = inpaint_core::eval::cell_key(method, *family);
                for (i, (im, real)) in ev.outputs.get(&key).into_iter().flatten().zip(&test).enumerate() {
                    let p = fdir.join(format!("{i:05}_{}.png", method.name()));
                    save_image(&p, im)?;
                    run.output(&base, &p)?;
                    let p = fdir.join(format!("{i:05}_{}_error.png", method.name()));
                    save_image(&p, &error_image(im, real, 4.0)?)?;
                    run.output(&base, &p)?;
                }
            }
        }
    }
    run.wall_time_ms = elapsed_ms(start);
    let mut name = args.out.as_os_str().to_owned();
    name.push(".run.json");
    run.write(&PathBuf::from(name))?;

    println!("{:<14} {:<8} {:>8} {:>9} {:>7} {:>9}", "method", "mask", "psnr", "psnr_hole", "ssim", "seam");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    for cell in ev.report.cells.values() {
        match &cell.error {
            Some(e) => println!("{:<14} {:<8} error: {e}", cell.method.name(), cell.mask_family.name()),
            None => println!(
                "{:<14} {:<8} {:>8} {:>9} {:>7} {:>9}",
                cell.method.name(),
                cell.mask_family.name(),
                fmt(cell.mean_psnr),
                fmt(cell.mean_psnr_hole),
                fmt(cell.mean_ssim),
                fmt(cell.mean_seam_energy)
            ),
        }
    }
    Ok(())
}
