use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Channel-planar, row-major image with values in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                op: "image",
                lhs: vec![channels, height, width],
                rhs: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("image value {v} outside [-1, 1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Like [`Image::new`] but clamps every value into `[−1, 1]` first.
    pub fn clamped(channels: usize, height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        Self::new(channels, height, width, data)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "image",
                lhs: vec![self.channels, self.height, self.width],
                rhs: vec![other.channels, other.height, other.width],
            })
        }
    }

    /// Mirror image about the vertical axis.
    pub fn flipped_horizontally(&self) -> Image {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Image { data, ..*self }
    }

    /// Stacks images into an `n×c×h×w` tensor.
    pub fn batch(images: &[&Image]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("cannot batch an empty image list"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            first.same_dims(img)?;
            data.extend_from_slice(&img.data);
        }
        Tensor::new(
            &[images.len(), first.channels, first.height, first.width],
            data,
        )
    }

    /// Splits an `n×c×h×w` tensor back into images, clamping to `[−1, 1]`.
    pub fn unbatch(t: &Tensor) -> Result<Vec<Image>> {
        let &[n, c, h, w] = t.shape() else {
            return Err(Error::ShapeMismatch {
                op: "unbatch",
                lhs: t.shape().to_vec(),
                rhs: vec![0, 0, 0, 0],
            });
        };
        let per = c * h * w;
        (0..n)
            .map(|i| Image::clamped(c, h, w, t.data()[i * per..(i + 1) * per].to_vec()))
            .collect()
    }
}
