//! Procedural datasets with learnable semantic structure.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ToyFaces,
    DigitsGrid,
    Blobs,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::ToyFaces, Family::DigitsGrid, Family::Blobs];

    pub fn name(self) -> &'static str {
        match self {
            Family::ToyFaces => "toy_faces",
            Family::DigitsGrid => "digits_grid",
            Family::Blobs => "blobs",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
                Error::invalid(format!(
                    "unknown dataset family `{s}`; valid families: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    pub count: usize,
    pub image_size: usize,
    pub channels: usize,
    pub seed: u64,
}

/// Renders `spec.count` images; a pure function of `spec`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Image>> {
    if spec.count == 0 {
        return Err(Error::invalid("dataset count must be at least 1"));
    }
    if spec.image_size < 8 {
        return Err(Error::invalid(format!(
            "image size {} too small (minimum 8)",
            spec.image_size
        )));
    }
    if spec.channels != 1 && spec.channels != 3 {
        return Err(Error::invalid(format!(
            "channels must be 1 or 3, got {}",
            spec.channels
        )));
    }
    let mut rng = crate::rng::stream(spec.seed, &format!("data/{}", spec.family));
    Ok((0..spec.count)
        .map(|_| {
            let mut canvas = Canvas::new(spec.image_size, spec.channels);
            match spec.family {
                Family::ToyFaces => draw_face(&mut canvas, &mut rng),
                Family::DigitsGrid => draw_digit(&mut canvas, &mut rng),
                Family::Blobs => draw_blobs(&mut canvas, &mut rng),
            }
            canvas.into_image()
        })
        .collect())
}

/// Deterministic shuffle split into `(train, test)`; the test side gets
/// `round(n · test_fraction)` items, kept within `1..n`.
pub fn split<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::invalid("need at least two items to split"));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::stream(seed, "split"));
    let test = order[..n_test].iter().map(|&i| items[i].clone()).collect();
    let train = order[n_test..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// Painter's-algorithm canvas with per-channel colours.
struct Canvas {
    size: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(size: usize, channels: usize) -> Self {
        Self {
            size,
            channels,
            data: vec![-1.0; channels * size * size],
        }
    }

    fn fill_with(&mut self, f: impl Fn(usize, f64, f64) -> f64) {
        let s = self.size;
        for c in 0..self.channels {
            for r in 0..s {
                for col in 0..s {
                    self.data[(c * s + r) * s + col] = f(c, r as f64 + 0.5, col as f64 + 0.5);
                }
            }
        }
    }

    /// Blends `color` over the canvas weighted by `coverage(y, x)`.
    fn paint(&mut self, color: &[f64], coverage: impl Fn(f64, f64) -> f64) {
        let s = self.size;
        let p = s * s;
        for r in 0..s {
            for col in 0..s {
                let a = coverage(r as f64 + 0.5, col as f64 + 0.5);
                if a <= 0.0 {
                    continue;
                }
                for (c, &v) in color.iter().enumerate().take(self.channels) {
                    let px = &mut self.data[c * p + r * s + col];
                    *px += a * (v - *px);
                }
            }
        }
    }

    fn into_image(self) -> Image {
        Image::clamped(self.channels, self.size, self.size, self.data)
            .expect("canvas dimensions are valid")
    }
}

/// Anti-aliased coverage of an axis-aligned ellipse.
fn ellipse(cy: f64, cx: f64, ry: f64, rx: f64) -> impl Fn(f64, f64) -> f64 {
    move |y, x| {
        let d = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
        ((1.0 - d) * rx.min(ry) + 0.5).clamp(0.0, 1.0)
    }
}

/// Anti-aliased coverage of an axis-aligned rectangle `[y0, y1) × [x0, x1)`.
fn rect(y0: f64, x0: f64, y1: f64, x1: f64) -> impl Fn(f64, f64) -> f64 {
    move |y, x| {
        let cy = ((y + 0.5).min(y1) - (y - 0.5).max(y0)).clamp(0.0, 1.0);
        let cx = ((x + 0.5).min(x1) - (x - 0.5).max(x0)).clamp(0.0, 1.0);
        cy * cx
    }
}

fn tinted(rng: &mut ChaCha8Rng, base: f64, channels: usize, spread: f64) -> Vec<f64> {
    (0..channels)
        .map(|_| {
            let t = if channels == 1 { 0.0 } else { rng.random_range(-spread..spread) };
            (base + t).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Nominal measurement windows `(row0, col0, row1, col1)` around the left
/// and right eye of a toy face; the right window mirrors the left.
pub fn toy_face_eye_boxes(size: usize) -> [(usize, usize, usize, usize); 2] {
    let s = size as f64;
    let row0 = (0.25 * s).floor() as usize;
    let row1 = (0.5 * s).ceil() as usize;
    let left = ((0.25 * s).floor() as usize, (0.47 * s).floor() as usize);
    let right = (size - left.1, size - left.0);
    [(row0, left.0, row1, left.1), (row0, right.0, row1, right.1)]
}

fn draw_face(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let s = canvas.size as f64;
    let ch = canvas.channels;
    let bg = rng.random_range(-0.9..-0.4);
    let slope = rng.random_range(-0.2..0.2);
    let bg_tint = tinted(rng, 0.0, ch, 0.15);
    canvas.fill_with(|c, y, _| (bg + bg_tint[c] + slope * (y / s - 0.5)).clamp(-1.0, 1.0));

    let cx = s / 2.0 + rng.random_range(-1.0..1.0) * s / 16.0;
    let cy = s / 2.0 + rng.random_range(-1.0..1.0) * s / 16.0;
    let rx = s * rng.random_range(0.30..0.35);
    let ry = s * rng.random_range(0.36..0.42);
    let skin = rng.random_range(0.1..0.6);
    let outline = tinted(rng, skin - 0.6, ch, 0.1);
    canvas.paint(&outline, ellipse(cy, cx, ry + 1.2, rx + 1.2));
    let skin_color = tinted(rng, skin, ch, 0.2);
    canvas.paint(&skin_color, ellipse(cy, cx, ry, rx));

    // Eyes share size, height and darkness so either one predicts the other.
    let eye_y = cy - ry * rng.random_range(0.25..0.35);
    let eye_dx = rx * rng.random_range(0.35..0.45);
    let eye_r = s * rng.random_range(0.05..0.075);
    let eye_val = rng.random_range(-1.0..-0.2);
    for side in [-1.0, 1.0] {
        let v: f64 = eye_val + rng.random_range(-0.05..0.05);
        let v = v.clamp(-1.0, 1.0);
        canvas.paint(&vec![v; ch], ellipse(eye_y, cx + side * eye_dx, eye_r, eye_r * 1.2));
    }

    let mouth_y = cy + ry * rng.random_range(0.40..0.55);
    let mouth_rx = rx * rng.random_range(0.3..0.5);
    let mouth_ry = s * rng.random_range(0.025..0.05);
    let base: f64 = rng.random_range(-0.9..-0.1);
    let mouth = tinted(rng, base, ch, 0.2);
    canvas.paint(&mouth, ellipse(mouth_y, cx, mouth_ry, mouth_rx));
}

/// Segments a–g of a seven-segment display, per digit.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

fn draw_digit(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let s = canvas.size as f64;
    let ch = canvas.channels;
    let base: f64 = rng.random_range(-1.0..-0.6);
    let bg = tinted(rng, base, ch, 0.1);
    canvas.fill_with(|c, _, _| bg[c]);
    let digit = rng.random_range(0..10);
    let (gw, gh) = (s * rng.random_range(0.35..0.45), s * rng.random_range(0.6..0.75));
    let t = s * rng.random_range(0.07..0.1);
    let x0 = (s - gw) / 2.0 + rng.random_range(-1.0..1.0) * s / 8.0;
    let y0 = (s - gh) / 2.0 + rng.random_range(-1.0..1.0) * s / 10.0;
    let (x1, y1, ym) = (x0 + gw, y0 + gh, y0 + gh / 2.0);
    let base: f64 = rng.random_range(0.3..1.0);
    let fg = tinted(rng, base, ch, 0.2);
    let boxes = [
        (y0, x0, y0 + t, x1),
        (y0, x1 - t, ym, x1),
        (ym, x1 - t, y1, x1),
        (y1 - t, x0, y1, x1),
        (ym, x0, y1, x0 + t),
        (y0, x0, ym, x0 + t),
        (ym - t / 2.0, x0, ym + t / 2.0, x1),
    ];
    for (on, &(a, b, c, d)) in SEGMENTS[digit].iter().zip(&boxes) {
        if *on {
            canvas.paint(&fg, rect(a, b, c, d));
        }
    }
}

fn draw_blobs(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let s = canvas.size as f64;
    let ch = canvas.channels;
    let base: f64 = rng.random_range(-1.0..-0.5);
    let bg = tinted(rng, base, ch, 0.1);
    let count = rng.random_range(1..=3);
    let blobs: Vec<_> = (0..count)
        .map(|_| {
            let cy = rng.random_range(0.2..0.8) * s;
            let cx = rng.random_range(0.2..0.8) * s;
            let sy = rng.random_range(s / 12.0..s / 5.0);
            let sx = rng.random_range(s / 12.0..s / 5.0);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let base: f64 = rng.random_range(0.5..1.5);
            let amp = tinted(rng, base, ch, 0.3);
            (cy, cx, sy, sx, theta.sin_cos(), amp)
        })
        .collect();
    canvas.fill_with(|c, y, x| {
        let mut v = bg[c];
        for (cy, cx, sy, sx, (sin, cos), amp) in &blobs {
            let (dy, dx) = (y - cy, x - cx);
            let u = (cos * dx + sin * dy) / sx;
            let w = (-sin * dx + cos * dy) / sy;
            v += amp[c] * (-(u * u + w * w) / 2.0).exp();
        }
        v.clamp(-1.0, 1.0)
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, count: usize) -> DatasetSpec {
        DatasetSpec {
            family,
            count,
            image_size: 32,
            channels: 1,
            seed: 7,
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(generate_dataset(&spec(Family::Blobs, 0)).is_err());
    }

    #[test]
    fn unknown_family_lists_valid_ones() {
        let err = "faces".parse::<Family>().unwrap_err().to_string();
        assert!(err.contains("toy_faces") && err.contains("digits_grid") && err.contains("blobs"));
    }

    #[test]
    fn every_family_is_deterministic_and_in_range() {
        for family in Family::ALL {
            for channels in [1, 3] {
                let s = DatasetSpec {
                    channels,
                    ..spec(family, 20)
                };
                let a = generate_dataset(&s).unwrap();
                let b = generate_dataset(&s).unwrap();
                assert_eq!(a, b);
                assert!(a.iter().all(|im| im.data().iter().all(|v| (-1.0..=1.0).contains(v))));
                assert!(a.windows(2).any(|w| w[0] != w[1]));
            }
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let items: Vec<usize> = (0..100).collect();
        let (train, test) = split(&items, 0.1, 3).unwrap();
        assert_eq!((train.len(), test.len()), (90, 10));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split(&items, 0.1, 3).unwrap(), (train.clone(), test.clone()));
        assert_ne!(split(&items, 0.1, 4).unwrap().1, test);
        assert!(split(&items, 0.0, 3).is_err());
        assert!(split(&items, 1.0, 3).is_err());
    }
}
