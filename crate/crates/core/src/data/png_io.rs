//! 8-bit grayscale/RGB PNG I/O.
//!
//! Pixels map to image values by `v / 127.5 − 1`; saving inverts the map
//! with round-half-up and clamping, so `save ∘ load ∘ save` is byte-stable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::image::Image;
use crate::error::{Error, Result};

/// Raw interleaved 8-bit pixels as stored in a PNG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPixels {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub bytes: Vec<u8>,
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_png(path: &Path) -> Result<RawPixels> {
    let file = File::open(path).map_err(|e| image_err(path, e.to_string()))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| image_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(image_err(path, format!("unsupported bit depth {depth:?}; expected 8")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(image_err(
                path,
                format!("unsupported color type {other:?}; expected grayscale or RGB"),
            ))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| image_err(path, e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let mut bytes = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(info.line_size).take(height) {
        bytes.extend_from_slice(&row[..width * channels]);
    }
    Ok(RawPixels {
        channels,
        height,
        width,
        bytes,
    })
}

pub fn encode_png(raw: &RawPixels) -> Result<Vec<u8>> {
    let color = match raw.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::invalid(format!("cannot encode {c}-channel PNG"))),
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, raw.width as u32, raw.height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
        writer
            .write_image_data(&raw.bytes)
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, raw: &RawPixels) -> Result<()> {
    let bytes = encode_png(raw)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| image_err(path, e.to_string()))?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn byte_to_value(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

pub fn value_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn image_to_raw(image: &Image) -> RawPixels {
    let (c, h, w) = image.dims();
    let mut bytes = vec![0u8; c * h * w];
    for ch in 0..c {
        for (i, &v) in image.plane(ch).iter().enumerate() {
            bytes[i * c + ch] = value_to_byte(v);
        }
    }
    RawPixels {
        channels: c,
        height: h,
        width: w,
        bytes,
    }
}

pub fn raw_to_image(raw: &RawPixels) -> Result<Image> {
    let (c, p) = (raw.channels, raw.height * raw.width);
    let mut data = vec![0.0; c * p];
    for (i, &b) in raw.bytes.iter().enumerate() {
        data[(i % c) * p + i / c] = byte_to_value(b);
    }
    Image::new(c, raw.height, raw.width, data)
}

pub fn load_image(path: &Path) -> Result<Image> {
    raw_to_image(&read_png(path)?)
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    write_png(path, &image_to_raw(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_byte_map() {
        assert_eq!(byte_to_value(0), -1.0);
        assert_eq!(byte_to_value(255), 1.0);
        assert!((byte_to_value(127) + 0.00392156862745098).abs() < 1e-15);
        for b in 0..=255u8 {
            assert_eq!(value_to_byte(byte_to_value(b)), b);
        }
        assert_eq!(value_to_byte(2.0), 255);
        assert_eq!(value_to_byte(-3.0), 0);
    }

    #[test]
    fn rgb_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::new(3, 2, 3, (0..18).map(|i| i as f64 / 9.0 - 1.0).collect()).unwrap();
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.dims(), img.dims());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
        let path2 = dir.path().join("y.png");
        save_image(&path2, &back).unwrap();
        assert_eq!(load_image(&path2).unwrap(), back);
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn unsupported_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sixteen.png");
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 0]).unwrap();
        }
        std::fs::write(&path, out).unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("bit depth"), "{err}");
        assert!(load_image(&dir.path().join("missing.png")).is_err());
    }
}
