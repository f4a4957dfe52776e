use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::GanConfig;
use super::nets::{sample_latent, BnMode, Discriminator, Generator, Parameter};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Diagnostics of one discriminator + generator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_accuracy: f64,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_accuracy: f64,
    pub wall_time_ms: u64,
}

fn update(
    params: &mut [Parameter],
    states: &mut [AdamState],
    g: &Graph,
    vars: &[Var],
    cfg: &AdamConfig,
    which: &str,
) -> Result<()> {
    for ((p, s), &v) in params.iter_mut().zip(states).zip(vars) {
        let zeros;
        let grad = match g.grad(v) {
            Some(grad) => grad,
            None => {
                zeros = vec![0.0; p.value.numel()];
                &zeros
            }
        };
        adam_step(p.value.data_mut(), grad, s, cfg)?;
        if !p.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{which} update produced a non-finite value in {}",
                p.name
            )));
        }
    }
    Ok(())
}

fn context(which: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{which} update: {m}")),
        other => other,
    }
}

impl Checkpoint {
    /// Freshly initialized networks and optimizer state for `config`.
    pub fn init(config: &GanConfig) -> Result<Self> {
        config.validate()?;
        let mut init = stream(config.seed, "gan/init");
        let generator = Generator::new(config, &mut init)?;
        let discriminator = Discriminator::new(config, &mut init)?;
        let adam = |ps: &[Parameter]| ps.iter().map(|p| AdamState::new(p.value.numel())).collect();
        Ok(Self {
            gen_adam: adam(generator.params()),
            disc_adam: adam(discriminator.params()),
            generator,
            discriminator,
            rng: stream(config.seed, "gan/train"),
            epoch: 0,
            config: config.clone(),
        })
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig::new(self.config.lr, self.config.beta1, self.config.beta2)
    }

    /// One discriminator update followed by one generator update on a batch
    /// of real images (`n×c×s×s`).
    ///
    /// The discriminator minimizes `−mean log D(x) − mean log(1 − D(G(z)))`;
    /// the generator minimizes `−mean log D(G(z))` against the updated
    /// discriminator, reusing the same fake batch.
    pub fn train_step(&mut self, real: &Tensor) -> Result<StepMetrics> {
        let n = real.shape()[0];
        let cfg = self.adam_config();
        let z = sample_latent(&mut self.rng, n, self.config.latent_dim);

        let mut gg = Graph::new();
        let gvars = self.generator.bind(&mut gg, true)?;
        let zv = gg.constant(z)?;
        let (fake, stats) = self
            .generator
            .forward(&mut gg, &gvars, zv, BnMode::Train)
            .map_err(context("generator"))?;

        // Discriminator on real and fake together; D has no batch coupling.
        let mut both = real.data().to_vec();
        both.extend_from_slice(gg.value(fake).data());
        let mut shape = real.shape().to_vec();
        shape[0] = 2 * n;
        let both = Tensor::new(&shape, both)?;
        let labels = Tensor::from_fn(&[2 * n, 1], |i| if i < n { 1.0 } else { 0.0 });

        let mut dg = Graph::new();
        let dvars = self.discriminator.bind(&mut dg, true)?;
        let x = dg.constant(both)?;
        let p = self.discriminator.forward(&mut dg, &dvars, x)?;
        let y = dg.constant(labels.clone())?;
        let not_y = dg.constant(Tensor::from_fn(&[2 * n, 1], |i| 1.0 - labels.data()[i]))?;
        let log_p = dg.log(p)?;
        let one_minus = dg.mul_const(p, -1.0)?;
        let one_minus = dg.add_const(one_minus, 1.0)?;
        let log_q = dg.log(one_minus)?;
        let a = dg.mul(log_p, y)?;
        let b = dg.mul(log_q, not_y)?;
        let s = dg.add(a, b)?;
        let s = dg.sum(s)?;
        let d_loss_var = dg.mul_const(s, -1.0 / n as f64)?;
        let d_loss = dg.value(d_loss_var).item()?;
        if !d_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "discriminator update: d_loss = {d_loss}"
            )));
        }
        let probs = dg.value(p).data();
        let correct = probs[..n].iter().filter(|&&v| v > 0.5).count()
            + probs[n..].iter().filter(|&&v| v < 0.5).count();
        let d_accuracy = correct as f64 / (2 * n) as f64;
        dg.backward(d_loss_var).map_err(context("discriminator"))?;
        update(
            self.discriminator.params_mut(),
            &mut self.disc_adam,
            &dg,
            &dvars,
            &cfg,
            "discriminator",
        )?;

        let dvars = self.discriminator.bind(&mut gg, false)?;
        let pf = self.discriminator.forward(&mut gg, &dvars, fake)?;
        let lp = gg.log(pf)?;
        let m = gg.mean(lp)?;
        let g_loss_var = gg.mul_const(m, -1.0)?;
        let g_loss = gg.value(g_loss_var).item()?;
        if !g_loss.is_finite() {
            return Err(Error::NonFinite(format!("generator update: g_loss = {g_loss}")));
        }
        gg.backward(g_loss_var).map_err(context("generator"))?;
        update(
            self.generator.params_mut(),
            &mut self.gen_adam,
            &gg,
            &gvars,
            &cfg,
            "generator",
        )?;
        self.generator.update_running_stats(&stats);
        Ok(StepMetrics {
            d_loss,
            g_loss,
            d_accuracy,
        })
    }

    /// One pass over `images` in shuffled mini-batches; a trailing partial
    /// batch is dropped.
    pub fn train_epoch(&mut self, images: &[Image]) -> Result<EpochMetrics> {
        let bs = self.config.batch_size;
        if images.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if bs > images.len() {
            return Err(Error::invalid(format!(
                "batch_size {bs} exceeds the dataset size {}",
                images.len()
            )));
        }
        let (c, s) = (self.config.channels, self.config.image_size);
        if let Some(bad) = images.iter().find(|im| im.dims() != (c, s, s)) {
            return Err(Error::invalid(format!(
                "training image has shape {:?}, model expects {:?}",
                bad.dims(),
                (c, s, s)
            )));
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0; 3];
        let batches = images.len() / bs;
        for chunk in order.chunks_exact(bs) {
            let mut owned = Vec::with_capacity(bs);
            for &i in chunk {
                let flip = self.config.flip_augmentation && self.rng.random_bool(0.5);
                owned.push(if flip {
                    images[i].flipped_horizontally()
                } else {
                    images[i].clone()
                });
            }
            let refs: Vec<&Image> = owned.iter().collect();
            let m = self.train_step(&Image::batch(&refs)?)?;
            sums[0] += m.d_loss;
            sums[1] += m.g_loss;
            sums[2] += m.d_accuracy;
        }
        self.epoch += 1;
        let k = batches as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            d_loss: sums[0] / k,
            g_loss: sums[1] / k,
            d_accuracy: sums[2] / k,
            wall_time_ms: start.elapsed().as_millis() as u64,
        })
    }

    /// Trains until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each (e.g. to append to a log or save the checkpoint).
    pub fn train<F>(&mut self, images: &[Image], mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&Checkpoint, &EpochMetrics) -> Result<()>,
    {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let m = self.train_epoch(images)?;
            on_epoch(self, &m)?;
            log.push(m);
        }
        Ok(log)
    }
}

/// Initializes from `config.seed` and trains for `config.epochs` epochs.
pub fn train(config: &GanConfig, images: &[Image]) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    let mut ck = Checkpoint::init(config)?;
    if config.epochs > 0 && config.batch_size > images.len() {
        return Err(Error::invalid(format!(
            "batch_size {} exceeds the dataset size {}",
            config.batch_size,
            images.len()
        )));
    }
    let log = ck.train(images, |_, _| Ok(()))?;
    Ok((ck, log))
}
