//! Corruption masks: `1` marks a known pixel, `0` a missing one.
//!
//! Four families: a centred block, exact-count random pixels, thresholded
//! smooth-noise patterns, and a missing half.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_png, write_png, Image, RawPixels};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "mask",
                lhs: vec![height, width],
                rhs: vec![bits.len()],
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn all_known(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width)
            .map(|i| u8::from(f(i / width, i % width)))
            .collect();
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_known(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn missing_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing_count() as f64 / self.bits.len() as f64
    }

    /// An inpainting input needs at least one known and one missing pixel.
    pub fn validate_for_inpainting(&self) -> Result<()> {
        let missing = self.missing_count();
        if missing == 0 || missing == self.bits.len() {
            return Err(Error::invalid(format!(
                "mask must contain both known and missing pixels ({missing} of {} missing)",
                self.bits.len()
            )));
        }
        Ok(())
    }

    /// `image` with every missing pixel set to 0 in all channels.
    pub fn corrupt(&self, image: &Image) -> Result<Image> {
        if (image.height(), image.width()) != (self.height, self.width) {
            return Err(Error::ShapeMismatch {
                op: "corrupt",
                lhs: vec![image.height(), image.width()],
                rhs: vec![self.height, self.width],
            });
        }
        let p = self.bits.len();
        let data = image
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.bits[i % p] == 1 { v } else { 0.0 })
            .collect();
        Image::new(image.channels(), self.height, self.width, data)
    }

    /// 8-bit grayscale raster: 255 known, 0 missing.
    pub fn to_raw(&self) -> RawPixels {
        RawPixels {
            channels: 1,
            height: self.height,
            width: self.width,
            bytes: self.bits.iter().map(|&b| b * 255).collect(),
        }
    }

    pub fn from_raw(raw: &RawPixels) -> Result<Self> {
        if raw.channels != 1 {
            return Err(Error::invalid("mask PNG must be single-channel"));
        }
        let bits = raw
            .bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::invalid(format!(
                    "mask PNG values must be 0 or 255, found {other}"
                ))),
            })
            .collect::<Result<_>>()?;
        Self::new(raw.height, raw.width, bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_png(path, &self.to_raw())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raw(&read_png(path)?)
    }
}

/// Axis-centred hole of `⌊h·f⌋ × ⌊w·f⌋` missing pixels.
pub fn center_mask(h: usize, w: usize, hole_fraction: f64) -> Result<Mask> {
    if !(hole_fraction > 0.0 && hole_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "hole fraction must lie in (0, 1), got {hole_fraction}"
        )));
    }
    let hh = (h as f64 * hole_fraction).floor() as usize;
    let hw = (w as f64 * hole_fraction).floor() as usize;
    if hh == 0 || hw == 0 || (hh == h && hw == w) {
        return Err(Error::invalid(format!(
            "center hole {hh}x{hw} is degenerate for a {h}x{w} image"
        )));
    }
    let (top, left) = ((h - hh) / 2, (w - hw) / 2);
    Ok(Mask::from_fn(h, w, |r, c| {
        !((top..top + hh).contains(&r) && (left..left + hw).contains(&c))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomPlacement {
    /// Exactly `⌊h·w·f⌋` missing pixels placed by a seeded shuffle.
    #[default]
    ExactCount,
    /// Each pixel missing independently with probability `f`.
    Bernoulli,
}

pub fn random_mask(h: usize, w: usize, missing_fraction: f64, seed: u64) -> Result<Mask> {
    random_mask_with(h, w, missing_fraction, seed, RandomPlacement::ExactCount)
}

pub fn random_mask_with(
    h: usize,
    w: usize,
    missing_fraction: f64,
    seed: u64,
    placement: RandomPlacement,
) -> Result<Mask> {
    if !(missing_fraction > 0.0 && missing_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "missing fraction must lie in (0, 1), got {missing_fraction}"
        )));
    }
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = match placement {
        RandomPlacement::ExactCount => {
            let missing = (n as f64 * missing_fraction).floor() as usize;
            let mut bits = vec![1u8; n];
            bits[..missing].fill(0);
            bits.shuffle(&mut rng);
            bits
        }
        RandomPlacement::Bernoulli => (0..n)
            .map(|_| u8::from(!rng.random_bool(missing_fraction)))
            .collect(),
    };
    Mask::new(h, w, bits)
}

/// Separable Gaussian blur with clamped borders.
fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * field[r * w + clamp(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

pub const PATTERN_TOLERANCE: f64 = 0.05;
const PATTERN_BISECTION_STEPS: usize = 64;

/// Contiguous blobs from thresholded, Gaussian-smoothed uniform noise
/// (σ = h/8); the threshold is bisected until the missing fraction is as
/// close to `target_missing` as the field allows.
pub fn pattern_mask(h: usize, w: usize, target_missing: f64, seed: u64) -> Result<Mask> {
    if !(target_missing > 0.0 && target_missing <= 0.5) {
        return Err(Error::invalid(format!(
            "pattern target must lie in (0, 0.5], got {target_missing}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    let sigma = (h as f64 / 8.0).max(0.5);
    let field = gaussian_blur(&noise, h, w, sigma);
    let n = (h * w) as f64;
    let fraction_below = |t: f64| field.iter().filter(|&&v| v < t).count() as f64 / n;
    let (mut lo, mut hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    hi = f64::from_bits(hi.to_bits() + 1);
    let mut best = (f64::INFINITY, hi);
    for _ in 0..PATTERN_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let frac = fraction_below(mid);
        let err = (frac - target_missing).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if err <= 0.5 / n {
            break;
        }
        if frac < target_missing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > PATTERN_TOLERANCE {
        return Err(Error::invalid(format!(
            "pattern threshold search missed target {target_missing} by {:.3}",
            best.0
        )));
    }
    let t = best.1;
    Mask::new(h, w, field.iter().map(|&v| u8::from(v >= t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfSide {
    Left,
    Right,
    Top,
    Bottom,
}

/// Which half `half_mask` removes for `seed`.
pub fn half_side(seed: u64) -> HalfSide {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [HalfSide::Left, HalfSide::Right, HalfSide::Top, HalfSide::Bottom][rng.random_range(0..4)]
}

/// One of the four image halves missing, chosen uniformly by `seed`.
pub fn half_mask(h: usize, w: usize, seed: u64) -> Result<Mask> {
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("half mask needs h, w >= 2, got {h}x{w}")));
    }
    let (hh, hw) = (h / 2, w / 2);
    Ok(match half_side(seed) {
        HalfSide::Left => Mask::from_fn(h, w, |_, c| c >= hw),
        HalfSide::Right => Mask::from_fn(h, w, |_, c| c < w - hw),
        HalfSide::Top => Mask::from_fn(h, w, |r, _| r >= hh),
        HalfSide::Bottom => Mask::from_fn(h, w, |r, _| r < h - hh),
    })
}

/// Mask family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MaskSpec {
    Center { hole_fraction: f64 },
    Pattern { target_missing: f64 },
    Random { missing_fraction: f64 },
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFamily {
    Center,
    Pattern,
    Random,
    Half,
}

impl MaskFamily {
    pub const ALL: [MaskFamily; 4] = [
        MaskFamily::Center,
        MaskFamily::Pattern,
        MaskFamily::Random,
        MaskFamily::Half,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskFamily::Center => "center",
            MaskFamily::Pattern => "pattern",
            MaskFamily::Random => "random",
            MaskFamily::Half => "half",
        }
    }

    /// Default parameters: half-side centre block, 25 % pattern, 80 % random.
    pub fn default_spec(self) -> MaskSpec {
        match self {
            MaskFamily::Center => MaskSpec::Center { hole_fraction: 0.5 },
            MaskFamily::Pattern => MaskSpec::Pattern {
                target_missing: 0.25,
            },
            MaskFamily::Random => MaskSpec::Random {
                missing_fraction: 0.8,
            },
            MaskFamily::Half => MaskSpec::Half,
        }
    }
}

impl fmt::Display for MaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown mask family `{s}`; valid families: center, pattern, random, half"
                ))
            })
    }
}

impl MaskSpec {
    pub fn family(&self) -> MaskFamily {
        match self {
            MaskSpec::Center { .. } => MaskFamily::Center,
            MaskSpec::Pattern { .. } => MaskFamily::Pattern,
            MaskSpec::Random { .. } => MaskFamily::Random,
            MaskSpec::Half => MaskFamily::Half,
        }
    }

    pub fn generate(&self, h: usize, w: usize, seed: u64) -> Result<Mask> {
        match *self {
            MaskSpec::Center { hole_fraction } => center_mask(h, w, hole_fraction),
            MaskSpec::Pattern { target_missing } => pattern_mask(h, w, target_missing, seed),
            MaskSpec::Random { missing_fraction } => random_mask(h, w, missing_fraction, seed),
            MaskSpec::Half => half_mask(h, w, seed),
        }
    }
}

/// Sizes of the 4-connected components of missing pixels.
pub fn hole_component_sizes(mask: &Mask) -> Vec<usize> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.bits[start] == 1 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.bits[j] == 0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        sizes.push(size);
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_small_and_large() {
        let m = center_mask(4, 4, 0.5).unwrap();
        assert_eq!(m.missing_count(), 4);
        assert_eq!(m.bits().iter().filter(|&&b| b == 1).count(), 12);
        assert!(!m.is_known(1, 1) && !m.is_known(2, 2) && m.is_known(0, 0));
        assert_eq!(center_mask(64, 64, 0.5).unwrap().missing_count(), 1024);
        let m = center_mask(32, 32, 0.5).unwrap();
        let rotated: Vec<u8> = m.bits().iter().rev().copied().collect();
        assert_eq!(rotated, m.bits());
    }

    #[test]
    fn center_degenerate_rejected() {
        assert!(center_mask(4, 4, 0.1).is_err());
        assert!(center_mask(4, 4, 1.0).is_err());
        assert!(center_mask(4, 4, 0.0).is_err());
    }

    #[test]
    fn random_exact_count_and_determinism() {
        let m = random_mask(32, 32, 0.8, 9).unwrap();
        assert_eq!(m.missing_count(), 819);
        assert_eq!(m, random_mask(32, 32, 0.8, 9).unwrap());
        assert_ne!(m, random_mask(32, 32, 0.8, 10).unwrap());
        let b = random_mask_with(32, 32, 0.8, 9, RandomPlacement::Bernoulli).unwrap();
        assert!((b.missing_fraction() - 0.8).abs() < 0.06);
    }

    #[test]
    fn pattern_fraction_and_determinism() {
        let m = pattern_mask(32, 32, 0.25, 4).unwrap();
        assert!((m.missing_fraction() - 0.25).abs() <= PATTERN_TOLERANCE);
        assert_eq!(m, pattern_mask(32, 32, 0.25, 4).unwrap());
        assert!(pattern_mask(32, 32, 0.6, 4).is_err());
    }

    #[test]
    fn half_is_single_border_rectangle() {
        for seed in 0..16 {
            let m = half_mask(32, 32, seed).unwrap();
            assert_eq!(m.missing_count(), 512);
            assert_eq!(hole_component_sizes(&m), vec![512]);
            let touches = match half_side(seed) {
                HalfSide::Left => !m.is_known(0, 0) && !m.is_known(31, 0),
                HalfSide::Right => !m.is_known(0, 31) && !m.is_known(31, 31),
                HalfSide::Top => !m.is_known(0, 0) && !m.is_known(0, 31),
                HalfSide::Bottom => !m.is_known(31, 0) && !m.is_known(31, 31),
            };
            assert!(touches);
        }
        assert!(half_mask(1, 4, 0).is_err());
    }

    #[test]
    fn png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = pattern_mask(16, 16, 0.25, 2).unwrap();
        m.save(&path).unwrap();
        assert_eq!(Mask::load(&path).unwrap(), m);
    }

    #[test]
    fn validation_requires_both_kinds() {
        assert!(Mask::all_known(3, 3).validate_for_inpainting().is_err());
        assert!(Mask::new(1, 2, vec![0, 0]).unwrap().validate_for_inpainting().is_err());
        assert!(center_mask(8, 8, 0.5).unwrap().validate_for_inpainting().is_ok());
    }
}
