pub mod evaluate;
pub mod gen_data;
pub mod grad_check;
pub mod inpaint;
pub mod make_mask;
pub mod train;

use std::path::Path;
use std::time::Instant;

use anyhow::Context as _;
use clap::Args as ClapArgs;
use inpaint_core::inpaint::InpaintConfig;
use inpaint_core::mask::{MaskFamily, MaskSpec};
use serde_json::Value;

use crate::config::{flag, resolve};
use crate::{CliError, CliResult, Context};

pub fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(CliError::usage)
}

pub fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Inversion settings shared by `inpaint` and `evaluate`.
#[derive(Debug, Clone, ClapArgs)]
pub struct InpaintFlags {
    /// Prior-loss weight λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Disable the prior loss (λ = 0).
    #[arg(long)]
    pub no_prior: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Adam learning rate on the latent vector.
    #[arg(long)]
    pub latent_lr: Option<f64>,
    /// Importance-weight window (odd).
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Do not clamp the latent vector to [-1, 1] after each step.
    #[arg(long)]
    pub no_clip: bool,
}

impl InpaintFlags {
    pub fn resolve(&self, ctx: &Context, seed: u64) -> CliResult<InpaintConfig> {
        let mut cfg: InpaintConfig = resolve(
            &InpaintConfig::default(),
            "inpaint",
            ctx.config.as_ref(),
            &[
                ("lambda", flag(&self.lambda)),
                ("iterations", flag(&self.iterations)),
                ("restarts", flag(&self.restarts)),
                ("lr", flag(&self.latent_lr)),
                ("window_size", flag(&self.window_size)),
                ("clip_latent", self.no_clip.then_some(Value::Bool(false))),
            ],
        )
        .map_err(CliError::usage)?;
        if self.no_prior {
            cfg.lambda = 0.0;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mask family plus its single size parameter.
pub fn mask_spec(family: MaskFamily, fraction: Option<f64>) -> CliResult<MaskSpec> {
    Ok(match (family, fraction) {
        (f, None) => f.default_spec(),
        (MaskFamily::Center, Some(v)) => MaskSpec::Center { hole_fraction: v },
        (MaskFamily::Pattern, Some(v)) => MaskSpec::Pattern { target_missing: v },
        (MaskFamily::Random, Some(v)) => MaskSpec::Random { missing_fraction: v },
        (MaskFamily::Half, Some(_)) => {
            return Err(CliError::usage(anyhow::anyhow!(
                "the half mask family takes no --mask-fraction"
            )))
        }
    })
}

/// Mask family and fraction from flags, falling back to the `mask` config
/// section.
pub fn resolve_mask(
    ctx: &Context,
    family: Option<&str>,
    fraction: Option<f64>,
) -> CliResult<(MaskFamily, Option<f64>)> {
    #[derive(serde::Serialize, serde::Deserialize)]
    struct MaskSection {
        family: String,
        fraction: Option<f64>,
    }
    let s: MaskSection = resolve(
        &MaskSection {
            family: "center".into(),
            fraction: None,
        },
        "mask",
        ctx.config.as_ref(),
        &[
            ("family", family.map(|f| Value::String(f.to_string()))),
            ("fraction", flag(&fraction)),
        ],
    )
    .map_err(CliError::usage)?;
    Ok((s.family.parse()?, s.fraction))
}

pub fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}
