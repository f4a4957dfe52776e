//! Final reconstruction from the generated image `g`, the corrupted input
//! `y` and the mask.
//!
//! Overlay copies the known pixels of `y` onto `g`. Poisson blending instead
//! solves, per channel, for the missing pixels `x` minimizing
//! `Σ (∇x − ∇g)²` over 4-neighbour differences with `x = y` on known pixels.
//! The normal equations are, for each missing pixel `p`,
//!
//! ```text
//! deg(p)·x_p − Σ_{q missing} x_q = Σ_q (g_p − g_q) + Σ_{q known} y_q
//! ```
//!
//! with `q` ranging over in-image neighbours. They are solved with
//! Jacobi-preconditioned conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::mask::Mask;

pub const CG_TOLERANCE: f64 = 1e-8;

fn check_shapes(y: &Image, mask: &Mask, g: &Image) -> Result<()> {
    y.same_dims(g)?;
    if (mask.height(), mask.width()) != (y.height(), y.width()) {
        return Err(Error::ShapeMismatch {
            op: "blend",
            lhs: vec![mask.height(), mask.width()],
            rhs: vec![y.height(), y.width()],
        });
    }
    Ok(())
}

/// Known pixels from `y`, missing ones from `g`.
pub fn overlay(y: &Image, mask: &Mask, g: &Image) -> Result<Image> {
    check_shapes(y, mask, g)?;
    let p = mask.height() * mask.width();
    let bits = mask.bits();
    let data = y
        .data()
        .iter()
        .zip(g.data())
        .enumerate()
        .map(|(i, (&a, &b))| if bits[i % p] == 1 { a } else { b })
        .collect();
    Image::new(y.channels(), y.height(), y.width(), data)
}

/// Sparse system over the missing pixels of a mask, shared by all channels.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    height: usize,
    width: usize,
    /// Pixel index of each unknown.
    pixels: Vec<usize>,
    /// Unknown id of each pixel, `usize::MAX` for known pixels.
    ids: Vec<usize>,
    /// In-image neighbour count of each unknown.
    degree: Vec<f64>,
    /// Missing neighbours of each unknown, as unknown ids.
    coupled: Vec<Vec<usize>>,
}

fn neighbours(idx: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (idx / w, idx % w);
    [
        (r > 0).then(|| idx - w),
        (r + 1 < h).then(|| idx + w),
        (c > 0).then(|| idx - 1),
        (c + 1 < w).then(|| idx + 1),
    ]
    .into_iter()
    .flatten()
}

impl PoissonSystem {
    /// Builds the system, rejecting holes with no known neighbour anywhere.
    pub fn new(mask: &Mask) -> Result<Self> {
        let (h, w) = (mask.height(), mask.width());
        let bits = mask.bits();
        let mut ids = vec![usize::MAX; h * w];
        let mut pixels = Vec::new();
        for (i, &b) in bits.iter().enumerate() {
            if b == 0 {
                ids[i] = pixels.len();
                pixels.push(i);
            }
        }
        let mut degree = Vec::with_capacity(pixels.len());
        let mut coupled = Vec::with_capacity(pixels.len());
        for &p in &pixels {
            let mut d = 0.0;
            let mut c = Vec::with_capacity(4);
            for q in neighbours(p, h, w) {
                d += 1.0;
                if bits[q] == 0 {
                    c.push(ids[q]);
                }
            }
            degree.push(d);
            coupled.push(c);
        }
        let sys = Self {
            height: h,
            width: w,
            pixels,
            ids,
            degree,
            coupled,
        };
        sys.check_components(mask)?;
        Ok(sys)
    }

    fn check_components(&self, mask: &Mask) -> Result<()> {
        let n = self.pixels.len();
        let mut seen = vec![false; n];
        let bits = mask.bits();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let (mut size, mut anchored) = (0, false);
            while let Some(u) = stack.pop() {
                size += 1;
                for q in neighbours(self.pixels[u], self.height, self.width) {
                    if bits[q] == 1 {
                        anchored = true;
                    } else if !seen[self.ids[q]] {
                        seen[self.ids[q]] = true;
                        stack.push(self.ids[q]);
                    }
                }
            }
            if !anchored {
                let p = self.pixels[start];
                return Err(Error::IsolatedComponent {
                    row: p / self.width,
                    col: p % self.width,
                    size,
                });
            }
        }
        Ok(())
    }

    pub fn unknowns(&self) -> usize {
        self.pixels.len()
    }

    /// Pixel indices (row-major) of the unknowns, in id order.
    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    /// `A·x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut v = self.degree[i] * x[i];
            for &j in &self.coupled[i] {
                v -= x[j];
            }
            *o = v;
        }
    }

    /// Right-hand side for one channel plane of `y` and `g`.
    pub fn rhs(&self, y: &[f64], g: &[f64]) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|&p| {
                let mut b = 0.0;
                for q in neighbours(p, self.height, self.width) {
                    b += g[p] - g[q];
                    if self.ids[q] == usize::MAX {
                        b += y[q];
                    }
                }
                b
            })
            .collect()
    }

    /// Dense copy of `A`, row-major `n×n`.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.unknowns();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = self.degree[i];
            for &j in &self.coupled[i] {
                a[i * n + j] -= 1.0;
            }
        }
        a
    }

    /// Preconditioned conjugate gradients from `x` (updated in place).
    /// Returns the iteration count and final relative residual.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<(usize, f64)> {
        let n = self.unknowns();
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok((0, 0.0));
        }
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        r.iter_mut().zip(b).for_each(|(r, b)| *r = b - *r);
        let mut z: Vec<f64> = r.iter().zip(&self.degree).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let max_iter = 10 * n.max(1);
        let mut rel = norm(&r) / bnorm;
        let mut it = 0;
        while rel > CG_TOLERANCE {
            if it == max_iter {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: rel,
                });
            }
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] / self.degree[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            rel = norm(&r) / bnorm;
            it += 1;
        }
        Ok((it, rel))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unclamped blending result, channel-planar like [`Image`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// CG iterations per channel.
    pub iterations: Vec<usize>,
    /// Final relative residual per channel.
    pub residuals: Vec<f64>,
}

/// Solves the blending system without clamping. `initial` seeds CG on the
/// missing pixels (defaults to `g`).
pub fn poisson_blend_raw(
    y: &Image,
    mask: &Mask,
    g: &Image,
    initial: Option<&Image>,
) -> Result<PoissonSolution> {
    check_shapes(y, mask, g)?;
    if let Some(init) = initial {
        y.same_dims(init)?;
    }
    let sys = PoissonSystem::new(mask)?;
    let mut data = y.data().to_vec();
    let (mut iterations, mut residuals) = (Vec::new(), Vec::new());
    let p = mask.height() * mask.width();
    for c in 0..y.channels() {
        let start = initial.unwrap_or(g).plane(c);
        let mut x: Vec<f64> = sys.pixels().iter().map(|&i| start[i]).collect();
        let b = sys.rhs(y.plane(c), g.plane(c));
        let (it, res) = sys.solve(&b, &mut x)?;
        for (&i, v) in sys.pixels().iter().zip(x) {
            data[c * p + i] = v;
        }
        iterations.push(it);
        residuals.push(res);
    }
    Ok(PoissonSolution {
        channels: y.channels(),
        height: y.height(),
        width: y.width(),
        data,
        iterations,
        residuals,
    })
}

/// Gradient-domain reconstruction, clamped to `[−1, 1]`.
pub fn poisson_blend(y: &Image, mask: &Mask, g: &Image) -> Result<Image> {
    let s = poisson_blend_raw(y, mask, g, None)?;
    Image::clamped(s.channels, s.height, s.width, s.data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMode {
    Overlay,
    Blend,
}

impl BlendMode {
    pub fn name(self) -> &'static str {
        match self {
            BlendMode::Overlay => "overlay",
            BlendMode::Blend => "blend",
        }
    }
}

impl std::str::FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlay" => Ok(BlendMode::Overlay),
            "blend" => Ok(BlendMode::Blend),
            other => Err(Error::invalid(format!(
                "unknown mode {other:?}; expected overlay or blend"
            ))),
        }
    }
}

pub fn finish(y: &Image, mask: &Mask, g: &Image, mode: BlendMode) -> Result<Image> {
    match mode {
        BlendMode::Overlay => overlay(y, mask, g),
        BlendMode::Blend => poisson_blend(y, mask, g),
    }
}

/// Sum over channels and 4-adjacent known/missing pixel pairs of the squared
/// intensity difference.
pub fn seam_energy(x: &Image, mask: &Mask) -> Result<f64> {
    let (h, w) = (mask.height(), mask.width());
    if (x.height(), x.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            op: "seam_energy",
            lhs: vec![x.height(), x.width()],
            rhs: vec![h, w],
        });
    }
    let bits = mask.bits();
    let mut e = 0.0;
    for c in 0..x.channels() {
        let v = x.plane(c);
        for i in 0..h * w {
            // Each pair once: right and down neighbours only.
            for j in [(i % w + 1 < w).then(|| i + 1), (i / w + 1 < h).then(|| i + w)]
                .into_iter()
                .flatten()
            {
                if bits[i] != bits[j] {
                    e += (v[i] - v[j]).powi(2);
                }
            }
        }
    }
    Ok(e)
}
