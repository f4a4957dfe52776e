use crate::data::Image;
use crate::error::{Error, Result};
use crate::mask::Mask;

fn check(y: &Image, mask: &Mask) -> Result<()> {
    if (mask.height(), mask.width()) != (y.height(), y.width()) {
        return Err(Error::ShapeMismatch {
            op: "fill",
            lhs: vec![mask.height(), mask.width()],
            rhs: vec![y.height(), y.width()],
        });
    }
    Ok(())
}

/// Missing pixels set to the per-channel mean of the known pixels.
pub fn mean_fill(y: &Image, mask: &Mask) -> Result<Image> {
    check(y, mask)?;
    let bits = mask.bits();
    let known = bits.iter().filter(|&&b| b == 1).count();
    if known == 0 {
        return Err(Error::invalid("mean fill needs at least one known pixel"));
    }
    let mut data = Vec::with_capacity(y.data().len());
    for c in 0..y.channels() {
        let plane = y.plane(c);
        let mean = plane
            .iter()
            .zip(bits)
            .filter(|(_, &b)| b == 1)
            .map(|(v, _)| v)
            .sum::<f64>()
            / known as f64;
        data.extend(plane.iter().zip(bits).map(|(&v, &b)| if b == 1 { v } else { mean }));
    }
    Image::new(y.channels(), y.height(), y.width(), data)
}

/// Copies the hole from the training image closest to `y` in squared ℓ2
/// over the known pixels. Returns the filled image and the index of the
/// chosen neighbour (lowest index on ties).
pub fn nn_fill(y: &Image, mask: &Mask, train: &[Image]) -> Result<(Image, usize)> {
    check(y, mask)?;
    if train.is_empty() {
        return Err(Error::invalid("nearest-neighbour fill needs a non-empty training set"));
    }
    let bits = mask.bits();
    let p = bits.len();
    let mut best = (f64::INFINITY, 0);
    for (k, t) in train.iter().enumerate() {
        y.same_dims(t)?;
        let d: f64 = y
            .data()
            .iter()
            .zip(t.data())
            .enumerate()
            .filter(|(i, _)| bits[i % p] == 1)
            .map(|(_, (a, b))| (a - b).powi(2))
            .sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    let t = &train[best.1];
    let data = y
        .data()
        .iter()
        .zip(t.data())
        .enumerate()
        .map(|(i, (&a, &b))| if bits[i % p] == 1 { a } else { b })
        .collect();
    Ok((Image::new(y.channels(), y.height(), y.width(), data)?, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(f: impl Fn(usize) -> f64) -> Image {
        Image::new(1, 3, 3, (0..9).map(f).collect()).unwrap()
    }

    #[test]
    fn mean_fill_uses_known_mean() {
        let m = Mask::from_fn(3, 3, |r, c| r != 1 || c != 1);
        let y = img(|i| if i % 2 == 0 { 1.0 } else { 0.0 });
        // Known pixels: 1 at the four corners, 0 on the four edges.
        let out = mean_fill(&y, &m).unwrap();
        assert!((out.get(0, 1, 1) - 0.5).abs() < 1e-15);
        let c = img(|_| 0.4);
        assert!(mean_fill(&c, &m).unwrap().data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn nn_fill_picks_planted_match() {
        let m = Mask::from_fn(3, 3, |r, _| r == 0);
        let y = img(|i| i as f64 / 10.0);
        let mut train: Vec<Image> = (0..10).map(|k| img(|i| -(i as f64 + k as f64) / 20.0)).collect();
        train[6] = img(|i| if i < 3 { i as f64 / 10.0 } else { -0.7 });
        let (out, k) = nn_fill(&y, &m, &train).unwrap();
        assert_eq!(k, 6);
        assert_eq!(out.get(0, 0, 1), 0.1);
        assert_eq!(out.get(0, 2, 2), -0.7);
        let (single, _) = nn_fill(&y, &m, &train[..1]).unwrap();
        assert_eq!(single.get(0, 2, 2), train[0].get(0, 2, 2));
        assert!(nn_fill(&y, &m, &[]).is_err());
    }
}
