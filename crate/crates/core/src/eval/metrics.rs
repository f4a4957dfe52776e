//! Image quality metrics. Inputs are images in `[−1, 1]`; all metrics work
//! on the `[0, 1]` rescaling `(v + 1) / 2` with peak value 1.

use crate::data::Image;
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn unit(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (unit(x) - unit(y)).powi(2))
        .sum();
    Ok(s / a.data().len() as f64)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR over the missing pixels of `mask` only (all channels).
pub fn psnr_masked(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    a.same_dims(b)?;
    if (mask.height(), mask.width()) != (a.height(), a.width()) {
        return Err(Error::ShapeMismatch {
            op: "psnr_masked",
            lhs: vec![mask.height(), mask.width()],
            rhs: vec![a.height(), a.width()],
        });
    }
    if mask.missing_count() == 0 {
        return Err(Error::invalid("masked PSNR needs at least one missing pixel"));
    }
    let p = mask.bits().len();
    let (mut s, mut n) = (0.0, 0usize);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.bits()[i % p] == 0 {
            s += (unit(x) - unit(y)).powi(2);
            n += 1;
        }
    }
    Ok(psnr_from_mse(s / n as f64))
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            rows[r * wo + c] = taps.iter().enumerate().map(|(t, g)| g * plane[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = taps.iter().enumerate().map(|(t, g)| g * rows[(r + t) * wo + c]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let (c, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let taps = gaussian_taps();
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.plane(ch).iter().map(|&v| unit(v)).collect();
        let y: Vec<f64> = b.plane(ch).iter().map(|&v| unit(v)).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter(&x, h, w, &taps);
        let my = filter(&y, h, w, &taps);
        let sxx = filter(&prod(&x, &x), h, w, &taps);
        let syy = filter(&prod(&y, &y), h, w, &taps);
        let sxy = filter(&prod(&x, &y), h, w, &taps);
        let mut s = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += s / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// `min(1, gain·|result − real|)` per pixel in `[0, 1]` units.
pub fn error_map(result: &Image, real: &Image, gain: f64) -> Result<Vec<f64>> {
    result.same_dims(real)?;
    if !(gain > 0.0) {
        return Err(Error::invalid(format!("gain must be positive, got {gain}")));
    }
    Ok(result
        .data()
        .iter()
        .zip(real.data())
        .map(|(&x, &y)| (gain * (unit(x) - unit(y)).abs()).min(1.0))
        .collect())
}

/// [`error_map`] as a displayable image: black for no error, white for
/// saturated error.
pub fn error_image(result: &Image, real: &Image, gain: f64) -> Result<Image> {
    let m = error_map(result, real, gain)?;
    let (c, h, w) = result.dims();
    Image::clamped(c, h, w, m.into_iter().map(|v| 2.0 * v - 1.0).collect())
}
