use std::path::PathBuf;
use std::time::Instant;

use clap::Args as ClapArgs;
use serde_json::json;

use super::{elapsed_ms, mask_spec, resolve_mask};
use crate::manifest::RunManifest;
use crate::{CliResult, Context};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// center, pattern, random or half.
    #[arg(long)]
    pub family: Option<String>,
    /// Hole side fraction (center) or missing fraction (pattern, random).
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Mask side length; --height/--width override it.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG (white = known, black = missing).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CliResult {
    let start = Instant::now();
    let (family, fraction) = resolve_mask(ctx, args.family.as_deref(), args.fraction)?;
    let spec = mask_spec(family, fraction)?;
    let (h, w) = (args.height.unwrap_or(args.size), args.width.unwrap_or(args.size));
    let mask = spec.generate(h, w, args.seed)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        super::create_dir(dir)?;
    }
    mask.save(&args.out)?;
    let mut run = RunManifest::new(
        "make-mask",
        json!({ "mask": spec, "height": h, "width": w }),
        ctx.threads,
    );
    run.seeds.insert("mask".into(), args.seed);
    if let Some(parent) = args.out.parent() {
        run.output(parent, &args.out)?;
    }
    run.wall_time_ms = elapsed_ms(start);
    let mut name = args.out.as_os_str().to_owned();
    name.push(".run.json");
    run.write(&PathBuf::from(name))?;
    println!(
        "wrote {family} mask {}x{} with {} missing pixels ({:.1}%) to {}",
        h,
        w,
        mask.missing_count(),
        100.0 * mask.missing_fraction(),
        args.out.display()
    );
    Ok(())
}
