//! DCGAN-style generator and discriminator.
//!
//! Generator: `z → linear → 4×4 map → BN → ReLU`, then stride-2 transposed
//! convolutions (4×4 kernels) that double the resolution and halve the
//! channels, each followed by BN + ReLU, and a final transposed convolution
//! to image channels with `tanh`.
//!
//! Discriminator: the mirror image, stride-2 convolutions with leaky ReLU
//! down to 4×4, then a linear head and a clamped sigmoid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::GanConfig;
use crate::autodiff::{BatchStats, Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_MOMENTUM: f64 = 0.9;
/// Discriminator probabilities are clamped into `[P_MIN, 1 − P_MIN]`.
pub const P_MIN: f64 = 1e-7;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        Self { name, value }
    }
}

/// Whether batch norm uses batch statistics or the running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Inference,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], mean: f64) -> Tensor {
    let dist = Normal::new(mean, INIT_STD).expect("valid normal parameters");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn new(c: usize) -> Self {
        Self {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }

    fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

fn bind(g: &mut Graph, params: &[Parameter], trainable: bool) -> Result<Vec<Var>> {
    params
        .iter()
        .map(|p| g.leaf(p.value.clone().with_requires_grad(trainable)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GanConfig,
    params: Vec<Parameter>,
    running: Vec<RunningStats>,
}

/// Channel counts of the generator's feature maps, bottleneck first.
fn generator_channels(config: &GanConfig) -> Vec<usize> {
    let d = config.depth();
    let mut ch: Vec<usize> = (0..d).map(|i| config.bottleneck_channels() >> i).collect();
    ch.push(config.channels);
    ch
}

impl Generator {
    pub fn new(config: &GanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let ch = generator_channels(config);
        let d = config.depth();
        let mut params = vec![Parameter::new(
            "gen.proj.weight".into(),
            normal(rng, &[config.latent_dim, ch[0] * 16], 0.0),
        )];
        let mut running = Vec::new();
        for i in 0..d {
            if i > 0 {
                params.push(Parameter::new(
                    format!("gen.deconv{i}.weight"),
                    normal(rng, &[ch[i - 1], ch[i], 4, 4], 0.0),
                ));
            }
            params.push(Parameter::new(format!("gen.bn{i}.gamma"), normal(rng, &[ch[i]], 1.0)));
            params.push(Parameter::new(format!("gen.bn{i}.beta"), Tensor::zeros(&[ch[i]])));
            running.push(RunningStats::new(ch[i]));
        }
        params.push(Parameter::new(
            format!("gen.deconv{d}.weight"),
            normal(rng, &[ch[d - 1], ch[d], 4, 4], 0.0),
        ));
        params.push(Parameter::new(format!("gen.deconv{d}.bias"), Tensor::zeros(&[ch[d]])));
        Ok(Self {
            config: config.clone(),
            params,
            running,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        bind(g, &self.params, trainable)
    }

    /// Forward pass; returns the image batch and, in training mode, the batch
    /// statistics of every batch-norm layer.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        z: Var,
        mode: BnMode,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let zs = g.value(z).shape().to_vec();
        if zs.len() != 2 || zs[1] != self.config.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "generator",
                lhs: zs,
                rhs: vec![0, self.config.latent_dim],
            });
        }
        let n = zs[0];
        let ch = generator_channels(&self.config);
        let d = self.config.depth();
        let mut stats = Vec::new();
        let mut next = vars.iter().copied();
        let mut take = || next.next().expect("parameter list matches architecture");

        let proj = g.matmul(z, take())?;
        let mut h = g.reshape(proj, &[n, ch[0], 4, 4])?;
        for i in 0..d {
            if i > 0 {
                h = g.conv_transpose2d(h, take(), 2, 1)?;
            }
            let (gamma, beta) = (take(), take());
            h = match mode {
                BnMode::Train => {
                    let (out, s) = g.batchnorm2d(h, gamma, beta)?;
                    stats.push(s);
                    out
                }
                BnMode::Inference => {
                    let r = &self.running[i];
                    g.batchnorm2d_eval(h, gamma, beta, &r.mean, &r.var)?
                }
            };
            h = g.relu(h)?;
        }
        let out = g.conv_transpose2d(h, take(), 2, 1)?;
        let out = g.add_bias(out, take())?;
        Ok((g.tanh(out)?, stats))
    }

    /// Folds training batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.update(s);
        }
    }

    /// Images for the latent batch `z` (`n×latent_dim`) without gradients.
    pub fn generate(&self, z: &Tensor, mode: BnMode) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let zv = g.constant(z.clone())?;
        let (out, _) = self.forward(&mut g, &vars, zv, mode)?;
        Ok(g.value(out).clone())
    }

    pub(crate) fn from_parts(
        config: GanConfig,
        params: Vec<Parameter>,
        running: Vec<RunningStats>,
    ) -> Self {
        Self {
            config,
            params,
            running,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: GanConfig,
    params: Vec<Parameter>,
}

impl Discriminator {
    pub fn new(config: &GanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.depth();
        let mut params = Vec::new();
        let mut cin = config.channels;
        for i in 1..=d {
            let cout = config.base_feature_maps << (i - 1);
            params.push(Parameter::new(
                format!("disc.conv{i}.weight"),
                normal(rng, &[cout, cin, 4, 4], 0.0),
            ));
            params.push(Parameter::new(format!("disc.conv{i}.bias"), Tensor::zeros(&[cout])));
            cin = cout;
        }
        params.push(Parameter::new(
            "disc.head.weight".into(),
            normal(rng, &[cin * 16, 1], 0.0),
        ));
        params.push(Parameter::new("disc.head.bias".into(), Tensor::zeros(&[1])));
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        bind(g, &self.params, trainable)
    }

    /// Probability of being real for each image of `x` (`n×c×s×s`), shape `n×1`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let c = &self.config;
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1..] != [c.channels, c.image_size, c.image_size] {
            return Err(Error::ShapeMismatch {
                op: "discriminator",
                lhs: xs,
                rhs: vec![0, c.channels, c.image_size, c.image_size],
            });
        }
        let n = xs[0];
        let mut next = vars.iter().copied();
        let mut take = || next.next().expect("parameter list matches architecture");
        let mut h = x;
        for _ in 0..c.depth() {
            h = g.conv2d(h, take(), 2, 1)?;
            h = g.add_bias(h, take())?;
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let flat = g.reshape(h, &[n, c.bottleneck_channels() * 16])?;
        let logit = g.matmul(flat, take())?;
        let logit = g.add_bias(logit, take())?;
        let p = g.sigmoid(logit)?;
        g.clamp(p, P_MIN, 1.0 - P_MIN)
    }

    /// Real-probabilities of a batch, without gradients.
    pub fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let xv = g.constant(x.clone())?;
        let p = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(p).data().to_vec())
    }

    pub(crate) fn from_parts(config: GanConfig, params: Vec<Parameter>) -> Self {
        Self { config, params }
    }
}

/// `n` latent vectors with coordinates i.i.d. uniform on `[−1, 1]`.
pub fn sample_latent(rng: &mut ChaCha8Rng, n: usize, latent_dim: usize) -> Tensor {
    Tensor::from_fn(&[n.max(1), latent_dim], |_| rng.random_range(-1.0..=1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small() -> GanConfig {
        GanConfig {
            image_size: 16,
            base_feature_maps: 4,
            latent_dim: 8,
            ..GanConfig::default()
        }
    }

    #[test]
    fn shapes_and_ranges() {
        let cfg = small();
        let mut rng = stream(1, "init");
        let gen = Generator::new(&cfg, &mut rng).unwrap();
        let disc = Discriminator::new(&cfg, &mut rng).unwrap();
        let z = sample_latent(&mut rng, 3, cfg.latent_dim);
        for mode in [BnMode::Train, BnMode::Inference] {
            let x = gen.generate(&z, mode).unwrap();
            assert_eq!(x.shape(), &[3, 1, 16, 16]);
            assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            let p = disc.score(&x).unwrap();
            assert_eq!(p.len(), 3);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn latent_dim_mismatch_is_an_error() {
        let cfg = small();
        let gen = Generator::new(&cfg, &mut stream(1, "init")).unwrap();
        let z = Tensor::zeros(&[2, cfg.latent_dim + 1]);
        assert!(matches!(
            gen.generate(&z, BnMode::Inference),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn inference_generation_is_pure() {
        let cfg = small();
        let mut rng = stream(2, "init");
        let gen = Generator::new(&cfg, &mut rng).unwrap();
        let z = sample_latent(&mut rng, 2, cfg.latent_dim);
        let a = gen.generate(&z, BnMode::Inference).unwrap();
        let b = gen.generate(&z, BnMode::Inference).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn latent_samples_are_uniform_on_box() {
        let mut rng = stream(3, "latent");
        let z = sample_latent(&mut rng, 100_000, 1);
        let n = z.numel() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.02, "{var}");
        let again = sample_latent(&mut stream(3, "latent"), 100_000, 1);
        assert_eq!(z, again);
    }
}
