use std::path::PathBuf;
use std::time::Instant;

use clap::Args as ClapArgs;
use inpaint_core::data::{generate_dataset, write_dataset, DatasetSpec, Family, MANIFEST_FILE};
use serde_json::Value;

use super::{create_dir, elapsed_ms};
use crate::config::{flag, resolve};
use crate::manifest::{RunManifest, RUN_MANIFEST_FILE};
use crate::{CliError, CliResult, Context};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// toy_faces, digits_grid or blobs.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// 1 (grayscale) or 3 (RGB).
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CliResult {
    let start = Instant::now();
    if let Some(f) = &args.family {
        f.parse::<Family>()?;
    }
    let defaults = DatasetSpec {
        family: Family::ToyFaces,
        count: 2000,
        image_size: 32,
        channels: 1,
        seed: 0,
    };
    let spec: DatasetSpec = resolve(
        &defaults,
        "data",
        ctx.config.as_ref(),
        &[
            ("family", args.family.clone().map(Value::String)),
            ("count", flag(&args.count)),
            ("image_size", flag(&args.size)),
            ("channels", flag(&args.channels)),
            ("seed", flag(&args.seed)),
        ],
    )
    .map_err(CliError::usage)?;
    create_dir(&args.out)?;
    let images = generate_dataset(&spec)?;
    let m = write_dataset(&args.out, &spec, &images)?;

    let mut run = RunManifest::new("gen-data", serde_json::to_value(&spec).map_err(CliError::failure)?, ctx.threads);
    run.seeds.insert("data".into(), spec.seed);
    for f in &m.files {
        run.output(&args.out, &args.out.join(&f.name))?;
    }
    run.output(&args.out, &args.out.join(MANIFEST_FILE))?;
    run.wall_time_ms = elapsed_ms(start);
    run.write(&args.out.join(RUN_MANIFEST_FILE))?;
    println!(
        "wrote {} {} images ({}x{}x{}) to {}",
        spec.count,
        spec.family,
        spec.channels,
        spec.image_size,
        spec.image_size,
        args.out.display()
    );
    Ok(())
}
