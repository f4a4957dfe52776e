//! Training state and its binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "INPGANCK"
//! version      u32      currently 1
//! config       u64 latent_dim, u64 image_size, u64 channels,
//!              u64 base_feature_maps, f64 lr, f64 beta1, f64 beta2,
//!              u64 batch_size, u64 epochs, u64 seed, u8 flip_augmentation
//! epoch        u64      completed epochs
//! adam steps   u64 generator, u64 discriminator
//! rng          [u8; 32] seed, u64 stream, u128 word position
//! blocks       u32 count, then per block:
//!              u32 name length, name (UTF-8), u32 rank, u64 × rank dims,
//!              f64 × numel data
//! ```
//!
//! Blocks are the generator and discriminator parameters under their own
//! names, the batch-norm running averages (`<layer>.running_mean`,
//! `<layer>.running_var`) and the Adam moments (`adam.<param>.m`,
//! `adam.<param>.v`), in that order.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::config::GanConfig;
use super::nets::{Discriminator, Generator, Parameter, RunningStats};
use crate::autodiff::{AdamState, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"INPGANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run the trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: GanConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_adam: Vec<AdamState>,
    pub disc_adam: Vec<AdamState>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn block(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u64(d as u64);
        }
        for &v in data {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("integer out of range"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn block(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| corrupt("block name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or_else(|| corrupt(format!("block {name} larger than the file")))?;
        let data = (0..numel).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(&shape, data).map_err(|e| corrupt(format!("block {name}: {e}")))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let c = &self.config;
        for v in [c.latent_dim, c.image_size, c.channels, c.base_feature_maps] {
            w.u64(v as u64);
        }
        for v in [c.lr, c.beta1, c.beta2] {
            w.f64(v);
        }
        w.u64(c.batch_size as u64);
        w.u64(c.epochs as u64);
        w.u64(c.seed);
        w.u8(c.flip_augmentation as u8);
        w.u64(self.epoch as u64);
        w.u64(self.gen_adam.first().map_or(0, |s| s.step));
        w.u64(self.disc_adam.first().map_or(0, |s| s.step));
        w.0.extend_from_slice(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.0.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());

        let gp = self.generator.params();
        let dp = self.discriminator.params();
        let running = self.generator.running_stats();
        w.u32((gp.len() + dp.len() + 2 * running.len() + 2 * (gp.len() + dp.len())) as u32);
        for p in gp.iter().chain(dp) {
            w.block(&p.name, p.value.shape(), p.value.data());
        }
        for (i, r) in running.iter().enumerate() {
            w.block(&format!("gen.bn{i}.running_mean"), &[r.mean.len()], &r.mean);
            w.block(&format!("gen.bn{i}.running_var"), &[r.var.len()], &r.var);
        }
        let states = self.gen_adam.iter().chain(&self.disc_adam);
        for (p, s) in gp.iter().chain(dp).zip(states) {
            w.block(&format!("adam.{}.m", p.name), p.value.shape(), &s.m);
            w.block(&format!("adam.{}.v", p.name), p.value.shape(), &s.v);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "unsupported checkpoint version {version}; expected {CHECKPOINT_VERSION}"
            )));
        }
        let config = GanConfig {
            latent_dim: r.usize()?,
            image_size: r.usize()?,
            channels: r.usize()?,
            base_feature_maps: r.usize()?,
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            batch_size: r.usize()?,
            epochs: r.usize()?,
            seed: r.u64()?,
            flip_augmentation: r.u8()? != 0,
        };
        config
            .validate()
            .map_err(|e| corrupt(format!("invalid config: {e}")))?;
        let epoch = r.usize()?;
        let gen_step = r.u64()?;
        let disc_step = r.u64()?;
        let mut rng = ChaCha8Rng::from_seed(r.array()?);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(u128::from_le_bytes(r.array()?));

        // Fresh networks give the expected names and shapes.
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let template_g = Generator::new(&config, &mut dummy)?;
        let template_d = Discriminator::new(&config, &mut dummy)?;
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            blocks.push(r.block()?);
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after the last block"));
        }
        let mut blocks = blocks.into_iter();
        let mut next = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let (n, t) = blocks
                .next()
                .ok_or_else(|| corrupt(format!("missing block {name}")))?;
            if n != name || t.shape() != shape {
                return Err(corrupt(format!(
                    "expected block {name} {shape:?}, found {n} {:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let mut read_params = |template: &[Parameter]| -> Result<Vec<Parameter>> {
            template
                .iter()
                .map(|p| {
                    Ok(Parameter {
                        name: p.name.clone(),
                        value: next(&p.name, p.value.shape())?,
                    })
                })
                .collect()
        };
        let gp = read_params(template_g.params())?;
        let dp = read_params(template_d.params())?;
        let mut running = Vec::new();
        for (i, t) in template_g.running_stats().iter().enumerate() {
            let c = t.mean.len();
            running.push(RunningStats {
                mean: next(&format!("gen.bn{i}.running_mean"), &[c])?.into_data(),
                var: next(&format!("gen.bn{i}.running_var"), &[c])?.into_data(),
            });
        }
        let mut read_adam = |params: &[Parameter], step: u64| -> Result<Vec<AdamState>> {
            params
                .iter()
                .map(|p| {
                    Ok(AdamState {
                        m: next(&format!("adam.{}.m", p.name), p.value.shape())?.into_data(),
                        v: next(&format!("adam.{}.v", p.name), p.value.shape())?.into_data(),
                        step,
                    })
                })
                .collect()
        };
        let gen_adam = read_adam(&gp, gen_step)?;
        let disc_adam = read_adam(&dp, disc_step)?;
        if blocks.next().is_some() {
            return Err(corrupt("unexpected extra blocks"));
        }
        Ok(Self {
            generator: Generator::from_parts(config.clone(), gp, running),
            discriminator: Discriminator::from_parts(config.clone(), dp),
            config,
            gen_adam,
            disc_adam,
            rng,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| corrupt(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
