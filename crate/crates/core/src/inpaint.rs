//! Latent-space inversion: find the `z` whose generation best explains the
//! known pixels of a corrupted image while still looking real to the
//! discriminator.
//!
//! The objective for one image is
//!
//! ```text
//! L(z) = Σ_i W_i |G(z)_i − y_i|  +  λ log(1 − D(G(z)))
//! ```
//!
//! where `W` weights each known pixel by the fraction of missing pixels
//! around it. It is minimized with Adam, clamping `z` into `[−1, 1]` after
//! every step, from several random starting points.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, grad_check, AdamConfig, AdamState, Graph, Tensor, Var, GRAD_CHECK_EPS};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::gan::{sample_latent, BnMode, Discriminator, Generator};
use crate::mask::Mask;
use crate::rng::stream;

/// Per-pixel context weights of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    height: usize,
    width: usize,
    window_size: usize,
    values: Vec<f64>,
}

impl ImportanceWeights {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// Row-major weights.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// The weights repeated over `channels` planes, as an `1×c×h×w` tensor.
    pub fn broadcast(&self, channels: usize) -> Tensor {
        let p = self.values.len();
        Tensor::from_fn(&[1, channels, self.height, self.width], |i| self.values[i % p])
    }
}

/// For a known pixel, the fraction of missing pixels among its neighbours in
/// a `window_size × window_size` window (the pixel itself excluded, window
/// truncated at the borders); zero on missing pixels.
pub fn importance_weights(mask: &Mask, window_size: usize) -> Result<ImportanceWeights> {
    if window_size == 0 || window_size % 2 == 0 {
        return Err(Error::invalid(format!(
            "window_size must be odd and positive, got {window_size}"
        )));
    }
    let (h, w) = (mask.height(), mask.width());
    let r = window_size / 2;
    // Summed-area table of missing indicators, (h+1)×(w+1).
    let stride = w + 1;
    let mut sat = vec![0u32; (h + 1) * stride];
    for row in 0..h {
        let mut acc = 0u32;
        for col in 0..w {
            acc += u32::from(!mask.is_known(row, col));
            sat[(row + 1) * stride + col + 1] = sat[row * stride + col + 1] + acc;
        }
    }
    let mut values = vec![0.0; h * w];
    for row in 0..h {
        let (r0, r1) = (row.saturating_sub(r), (row + r + 1).min(h));
        for col in 0..w {
            if !mask.is_known(row, col) {
                continue;
            }
            let (c0, c1) = (col.saturating_sub(r), (col + r + 1).min(w));
            let missing = sat[r1 * stride + c1] + sat[r0 * stride + c0]
                - sat[r0 * stride + c1]
                - sat[r1 * stride + c0];
            let neighbours = (r1 - r0) * (c1 - c0) - 1;
            if neighbours > 0 {
                values[row * w + col] = missing as f64 / neighbours as f64;
            }
        }
    }
    Ok(ImportanceWeights {
        height: h,
        width: w,
        window_size,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub window_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub restarts: usize,
    pub seed: u64,
    pub clip_latent: bool,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            lambda: 0.003,
            iterations: 1500,
            window_size: 7,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            restarts: 3,
            seed: 0,
            clip_latent: true,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if self.window_size == 0 || self.window_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "window_size must be odd and positive, got {}",
                self.window_size
            )));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("lr must be positive and betas in [0, 1)"));
        }
        Ok(())
    }
}

/// Loss values at one iterate, one line of the exported trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub context: f64,
    pub prior: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintResult {
    pub z_hat: Vec<f64>,
    /// `G(ẑ)` in inference mode.
    pub generated: Image,
    /// Losses before each of the `iterations` steps of the chosen restart.
    pub trajectory: Vec<LossRecord>,
    /// Losses at `ẑ` itself.
    pub final_loss: LossRecord,
    pub restart: usize,
    /// Final total loss of every restart; `None` for restarts that failed.
    pub restart_losses: Vec<Option<f64>>,
    /// `D(G(ẑ))`.
    pub d_score: f64,
    /// Wall time of the optimization call; shared by jobs solved together.
    pub wall_time_ms: u64,
}

impl InpaintResult {
    pub fn trajectory_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.trajectory {
            out.push_str(&serde_json::to_string(r).expect("plain record serializes"));
            out.push('\n');
        }
        out
    }
}

/// One corrupted image to invert. `seed` drives its restart initializations.
#[derive(Debug, Clone, Copy)]
pub struct InpaintJob<'a> {
    pub corrupted: &'a Image,
    pub mask: &'a Mask,
    pub seed: u64,
}

/// `Σ W ⊙ |x − y|` per sample, shape `n×1`. All three inputs share the
/// shape `n×c×h×w`.
pub fn context_loss(g: &mut Graph, x: Var, y: Var, weights: Var) -> Result<Var> {
    let d = g.sub(x, y)?;
    let a = g.abs(d)?;
    let m = g.mul(a, weights)?;
    g.sum_per_sample(m)
}

/// `λ log(1 − D(x))` per sample, shape `n×1`.
pub fn prior_loss(
    g: &mut Graph,
    disc: &Discriminator,
    disc_vars: &[Var],
    x: Var,
    lambda: f64,
) -> Result<Var> {
    let p = disc.forward(g, disc_vars, x)?;
    let q = g.mul_const(p, -1.0)?;
    let q = g.add_const(q, 1.0)?;
    let l = g.log(q)?;
    g.mul_const(l, lambda)
}

/// Per-sample context, prior and total loss nodes (each `n×1`) for the
/// latent batch `z`. `y` and `weights` are already tiled to `n` samples.
pub struct LossNodes {
    pub generated: Var,
    pub context: Var,
    pub prior: Option<Var>,
    pub total: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph(
    g: &mut Graph,
    gen: &Generator,
    gen_vars: &[Var],
    disc: &Discriminator,
    disc_vars: &[Var],
    z: Var,
    y: Var,
    weights: Var,
    lambda: f64,
) -> Result<LossNodes> {
    let (x, _) = gen.forward(g, gen_vars, z, BnMode::Inference)?;
    let context = context_loss(g, x, y, weights)?;
    // λ = 0 contributes exactly zero; skip the discriminator pass.
    let (prior, total) = if lambda > 0.0 {
        let p = prior_loss(g, disc, disc_vars, x, lambda)?;
        (Some(p), g.add(context, p)?)
    } else {
        (None, context)
    };
    Ok(LossNodes {
        generated: x,
        context,
        prior,
        total,
    })
}

fn tile(t: &Tensor, n: usize) -> Result<Tensor> {
    let mut shape = t.shape().to_vec();
    shape[0] = n;
    let data = t.data().repeat(n);
    Tensor::new(&shape, data)
}

/// Everything for one batched optimization: samples `(job, restart)` laid
/// out job-major.
struct Problem {
    y: Tensor,
    weights: Tensor,
    z0: Tensor,
}

fn prepare(jobs: &[InpaintJob], gen: &Generator, config: &InpaintConfig) -> Result<Vec<Problem>> {
    let gc = gen.config();
    let (c, s) = (gc.channels, gc.image_size);
    jobs.iter()
        .map(|job| {
            if job.corrupted.dims() != (c, s, s) {
                return Err(Error::invalid(format!(
                    "image has shape {:?}, model generates {:?}",
                    job.corrupted.dims(),
                    (c, s, s)
                )));
            }
            if (job.mask.height(), job.mask.width()) != (s, s) {
                return Err(Error::invalid(format!(
                    "mask is {}×{}, image is {s}×{s}",
                    job.mask.height(),
                    job.mask.width()
                )));
            }
            job.mask.validate_for_inpainting()?;
            let w = importance_weights(job.mask, config.window_size)?;
            let mut z0 = Vec::with_capacity(config.restarts * gc.latent_dim);
            for k in 0..config.restarts {
                let mut rng = stream(job.seed, &format!("inpaint-restart-{k}"));
                z0.extend_from_slice(sample_latent(&mut rng, 1, gc.latent_dim).data());
            }
            Ok(Problem {
                y: Image::batch(&[job.corrupted])?,
                weights: w.broadcast(c),
                z0: Tensor::new(&[config.restarts, gc.latent_dim], z0)?,
            })
        })
        .collect()
}

struct Run {
    z: Vec<f64>,
    trajectory: Vec<Vec<LossRecord>>,
    finals: Vec<LossRecord>,
    generated: Tensor,
    d_scores: Vec<f64>,
}

/// Projected Adam over a batch of independent samples. Returns per-sample
/// trajectories, final losses, images and discriminator scores.
fn optimize(
    gen: &Generator,
    disc: &Discriminator,
    y: &Tensor,
    weights: &Tensor,
    z0: &Tensor,
    config: &InpaintConfig,
) -> Result<Run> {
    let n = z0.shape()[0];
    let dim = z0.shape()[1];
    let adam = AdamConfig::new(config.lr, config.beta1, config.beta2);
    let mut state = AdamState::new(n * dim);
    let mut z = z0.data().to_vec();
    let mut trajectory = vec![Vec::with_capacity(config.iterations); n];

    let evaluate = |z: &[f64], want_grad: bool| -> Result<(Vec<LossRecord>, Option<Vec<f64>>, Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let gv = gen.bind(&mut g, false)?;
        let dv = disc.bind(&mut g, false)?;
        let zv = g.leaf(Tensor::new(&[n, dim], z.to_vec())?.with_requires_grad(want_grad))?;
        let yv = g.constant(y.clone())?;
        let wv = g.constant(weights.clone())?;
        let nodes = total_loss_graph(&mut g, gen, &gv, disc, &dv, zv, yv, wv, config.lambda)?;
        let ctx = g.value(nodes.context).data().to_vec();
        let pri = nodes
            .prior
            .map(|p| g.value(p).data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let tot = g.value(nodes.total).data().to_vec();
        let records: Vec<LossRecord> = (0..n)
            .map(|i| LossRecord {
                iteration: 0,
                context: ctx[i],
                prior: pri[i],
                total: tot[i],
            })
            .collect();
        if let Some(bad) = records.iter().position(|r| !r.total.is_finite()) {
            return Err(Error::NonFinite(format!(
                "inversion loss of sample {bad} is {}",
                records[bad].total
            )));
        }
        if want_grad {
            let loss = g.sum(nodes.total)?;
            g.backward(loss)?;
            let grad = g.grad(zv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n * dim]);
            Ok((records, Some(grad), Tensor::zeros(&[1]), Vec::new()))
        } else {
            let img = g.value(nodes.generated).clone();
            let scores = disc.score(&img)?;
            Ok((records, None, img, scores))
        }
    };

    for it in 0..config.iterations {
        let (records, grad, _, _) = evaluate(&z, true)?;
        for (t, mut r) in trajectory.iter_mut().zip(records) {
            r.iteration = it;
            t.push(r);
        }
        adam_step(&mut z, &grad.expect("gradient requested"), &mut state, &adam)?;
        if config.clip_latent {
            z.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        }
    }
    let (mut finals, _, generated, d_scores) = evaluate(&z, false)?;
    finals.iter_mut().for_each(|r| r.iteration = config.iterations);
    Ok(Run {
        z,
        trajectory,
        finals,
        generated,
        d_scores,
    })
}

/// Per-restart outcome for one job.
struct Candidate {
    z: Vec<f64>,
    trajectory: Vec<LossRecord>,
    final_loss: LossRecord,
    generated: Image,
    d_score: f64,
}

fn split_run(run: Run, dim: usize) -> Result<Vec<Candidate>> {
    let images = Image::unbatch(&run.generated)?;
    Ok(run
        .trajectory
        .into_iter()
        .zip(run.finals)
        .zip(images)
        .zip(run.d_scores)
        .enumerate()
        .map(|(i, (((trajectory, final_loss), generated), d_score))| Candidate {
            z: run.z[i * dim..(i + 1) * dim].to_vec(),
            trajectory,
            final_loss,
            generated,
            d_score,
        })
        .collect())
}

fn pick(candidates: Vec<Option<Candidate>>, wall_time_ms: u64) -> Result<InpaintResult> {
    let restart_losses: Vec<Option<f64>> = candidates
        .iter()
        .map(|c| c.as_ref().map(|c| c.final_loss.total))
        .collect();
    let mut best: Option<usize> = None;
    for (k, loss) in restart_losses.iter().enumerate() {
        if let Some(l) = loss {
            if best.is_none_or(|b| *l < restart_losses[b].expect("chosen restart succeeded")) {
                best = Some(k);
            }
        }
    }
    let k = best.ok_or_else(|| Error::NonFinite("every restart of the inversion failed".into()))?;
    let c = candidates
        .into_iter()
        .nth(k)
        .flatten()
        .expect("chosen restart succeeded");
    Ok(InpaintResult {
        z_hat: c.z,
        generated: c.generated,
        trajectory: c.trajectory,
        final_loss: c.final_loss,
        restart: k,
        restart_losses,
        d_score: c.d_score,
        wall_time_ms,
    })
}

/// Inverts several corrupted images at once.
///
/// All restarts of all jobs are optimized as one batch. Samples do not
/// interact (the generator runs on its running batch-norm statistics), so
/// each result is what a separate run would give. If the batch hits a
/// non-finite value, restarts are rerun one by one and only the failing ones
/// are dropped; a job whose restarts all fail yields an error.
pub fn invert_batch(
    jobs: &[InpaintJob],
    gen: &Generator,
    disc: &Discriminator,
    config: &InpaintConfig,
) -> Result<Vec<Result<InpaintResult>>> {
    config.validate()?;
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let start = Instant::now();
    let problems = prepare(jobs, gen, config)?;
    let r = config.restarts;
    let dim = gen.config().latent_dim;
    let cat = |f: &dyn Fn(&Problem) -> Result<Tensor>| -> Result<Tensor> {
        let parts: Vec<Tensor> = problems.iter().map(f).collect::<Result<_>>()?;
        let mut shape = parts[0].shape().to_vec();
        shape[0] = parts.iter().map(|t| t.shape()[0]).sum();
        Tensor::new(&shape, parts.into_iter().flat_map(Tensor::into_data).collect())
    };
    let y = cat(&|p: &Problem| tile(&p.y, r))?;
    let w = cat(&|p: &Problem| tile(&p.weights, r))?;
    let z0 = cat(&|p: &Problem| Ok(p.z0.clone()))?;

    let per_sample: Vec<Option<Candidate>> = match optimize(gen, disc, &y, &w, &z0, config) {
        Ok(run) => split_run(run, dim)?.into_iter().map(Some).collect(),
        Err(Error::NonFinite(_)) => {
            let mut out = Vec::new();
            for p in &problems {
                for k in 0..r {
                    let z = Tensor::new(&[1, dim], p.z0.data()[k * dim..(k + 1) * dim].to_vec())?;
                    out.push(match optimize(gen, disc, &p.y, &p.weights, &z, config) {
                        Ok(run) => split_run(run, dim)?.pop(),
                        Err(Error::NonFinite(_)) => None,
                        Err(e) => return Err(e),
                    });
                }
            }
            out
        }
        Err(e) => return Err(e),
    };
    let wall = start.elapsed().as_millis() as u64;
    let mut it = per_sample.into_iter();
    Ok((0..jobs.len())
        .map(|_| pick(it.by_ref().take(r).collect(), wall))
        .collect())
}

/// Inverts one corrupted image with restarts seeded from `config.seed`.
pub fn invert(
    corrupted: &Image,
    mask: &Mask,
    gen: &Generator,
    disc: &Discriminator,
    config: &InpaintConfig,
) -> Result<InpaintResult> {
    let job = InpaintJob {
        corrupted,
        mask,
        seed: config.seed,
    };
    invert_batch(&[job], gen, disc, config)?
        .pop()
        .expect("one job gives one result")
}

/// Loss values of one image at a single latent vector.
pub fn total_loss(
    z: &[f64],
    corrupted: &Image,
    mask: &Mask,
    gen: &Generator,
    disc: &Discriminator,
    lambda: f64,
    window_size: usize,
) -> Result<LossRecord> {
    let dim = gen.config().latent_dim;
    if z.len() != dim {
        return Err(Error::ShapeMismatch {
            op: "total_loss",
            lhs: vec![z.len()],
            rhs: vec![dim],
        });
    }
    let w = importance_weights(mask, window_size)?;
    let mut g = Graph::new();
    let gv = gen.bind(&mut g, false)?;
    let dv = disc.bind(&mut g, false)?;
    let zv = g.constant(Tensor::new(&[1, dim], z.to_vec())?)?;
    let yv = g.constant(Image::batch(&[corrupted])?)?;
    let wv = g.constant(w.broadcast(corrupted.channels()))?;
    let nodes = total_loss_graph(&mut g, gen, &gv, disc, &dv, zv, yv, wv, lambda)?;
    Ok(LossRecord {
        iteration: 0,
        context: g.value(nodes.context).item()?,
        prior: nodes.prior.map_or(Ok(0.0), |p| g.value(p).item())?,
        total: g.value(nodes.total).item()?,
    })
}

/// Finite-difference check of `∇_z` of the full inversion objective for a
/// random image, mask and latent. Returns the maximum relative error.
pub fn check_total_loss_gradient(
    gen: &Generator,
    disc: &Discriminator,
    mask: &Mask,
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    let gc = gen.config();
    let (c, s, dim) = (gc.channels, gc.image_size, gc.latent_dim);
    let mut rng = stream(seed, "grad-check/pipeline");
    let y = Tensor::from_fn(&[1, c, s, s], |_| rng.random_range(-1.0..1.0));
    let z = sample_latent(&mut rng, 1, dim);
    let w = importance_weights(mask, 7)?.broadcast(c);
    grad_check(
        |g, zv| {
            let gv = gen.bind(g, false)?;
            let dv = disc.bind(g, false)?;
            let yv = g.constant(y.clone())?;
            let wv = g.constant(w.clone())?;
            let nodes = total_loss_graph(g, gen, &gv, disc, &dv, zv, yv, wv, lambda)?;
            g.sum(nodes.total)
        },
        &z,
        GRAD_CHECK_EPS,
    )
}
