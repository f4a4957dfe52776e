use std::path::PathBuf;
use std::time::Instant;

use anyhow::anyhow;
use clap::Args as ClapArgs;
use inpaint_core::autodiff::{check_all_ops, OpCheck, OpKind, GRAD_CHECK_TOL};
use inpaint_core::gan::{Checkpoint, GanConfig};
use inpaint_core::inpaint::check_total_loss_gradient;
use inpaint_core::mask::{center_mask, random_mask};
use serde_json::json;

use super::elapsed_ms;
use crate::{CliError, CliResult, Context};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Random configurations checked per operation.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model for the total-loss row; a freshly initialised one by default.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corrupt the backward pass of one op (self-test of the checker).
    #[arg(long, hide = true)]
    pub inject_broken: Option<String>,
    /// Print the table as JSON.
    #[arg(long)]
    pub json: bool,
}

pub fn run(_ctx: &Context, args: Args) -> CliResult {
    let start = Instant::now();
    if args.points == 0 {
        return Err(CliError::usage(anyhow!("--points must be at least 1")));
    }
    let fault = match &args.inject_broken {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let names: Vec<_> = OpKind::ALL.iter().map(|k| k.name()).collect();
            CliError::usage(anyhow!("unknown op `{name}`; valid ops: {}", names.join(", ")))
        })?),
        None => None,
    };
    let mut rows = check_all_ops(args.points, args.seed, fault)?;

    let ck = match &args.checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => Checkpoint::init(&GanConfig {
            seed: args.seed,
            ..GanConfig::default()
        })?,
    };
    let s = ck.config.image_size;
    let masks = [center_mask(s, s, 0.5)?, random_mask(s, s, 0.8, args.seed)?];
    let mut worst = 0.0f64;
    let mut checks = 0;
    for (i, mask) in masks.iter().enumerate() {
        for lambda in [0.0, 0.003, 1.0] {
            let seed = args.seed.wrapping_add(i as u64);
            worst = worst.max(check_total_loss_gradient(
                &ck.generator,
                &ck.discriminator,
                mask,
                lambda,
                seed,
            )?);
            checks += 1;
        }
    }
    rows.push(OpCheck {
        op: "total_loss(z)".into(),
        checks,
        max_relative_error: worst,
        passed: worst < GRAD_CHECK_TOL,
    });

    if args.json {
        let table: Vec<_> = rows
            .iter()
            .map(|r| json!({ "op": r.op, "checks": r.checks, "max_rel_err": r.max_relative_error, "passed": r.passed }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&table).map_err(CliError::failure)?);
    } else {
        println!("{:<22} {:>7} {:>12}  result", "op", "checks", "max_rel_err");
        for r in &rows {
            println!(
                "{:<22} {:>7} {:>12.3e}  {}",
                r.op,
                r.checks,
                r.max_relative_error,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    eprintln!("tolerance {GRAD_CHECK_TOL:e}; {} ms", elapsed_ms(start));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::failure(anyhow!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}
