//! Dense multi-channel images and their on-disk formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes of the float raster format.
pub const RASTER_MAGIC: [u8; 4] = *b"HSR1";

/// Row-major `H x W x C` image of `f64` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!("{} samples for a {height}x{width}x{channels} image", data.len())));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(Error::Dimension(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }
}

/// Writes a 3-channel image as binary PPM, clamping to `[0, 1]` and rounding
/// to 8 bits.
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Dimension(format!("PPM needs 3 channels, got {}", img.channels)));
    }
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut w = BufWriter::new(File::create(path)?);
    PnmEncoder::new(&mut w)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, img.width as u32, img.height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Invalid(format!("writing {}: {e}", path.display())))?;
    w.flush()?;
    Ok(())
}

/// Reads a binary PPM into `[0, 1]` samples.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::Invalid(format!("reading {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Image::new(w as usize, h as usize, 3, img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect())
}

/// Writes the float raster: magic, then `H`, `W`, `C` as little-endian `u32`,
/// then `H * W * C` little-endian `f32` samples in row-major order.
pub fn write_raster(path: &Path, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&RASTER_MAGIC)?;
    for d in [img.height, img.width, img.channels] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in &img.data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raster(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if header[..4] != RASTER_MAGIC {
        return Err(Error::Invalid(format!("{} is not a float raster", path.display())));
    }
    let dim = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (dim(1), dim(2), dim(3));
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * h * w * c {
        return Err(Error::Dimension(format!("{} payload bytes for {h}x{w}x{c}", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
    Image::new(w, h, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_roundtrip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.hsr");
        let data: Vec<f64> = (0..2 * 3 * 5).map(|i| (i as f32 * 0.37 - 2.0) as f64).collect();
        let mut img = Image::new(3, 2, 5, data).unwrap();
        img.data[4] = f32::INFINITY as f64;
        write_raster(&p, &img).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 4 * 30);
        assert_eq!(read_raster(&p).unwrap(), img);
    }

    #[test]
    fn raster_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.hsr");
        std::fs::write(&p, b"NOPE000000000000").unwrap();
        assert_eq!(read_raster(&p).unwrap_err().kind(), "invalid");
        let img = Image::filled(2, 2, 1, 0.5);
        write_raster(&p, &img).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, bytes).unwrap();
        assert_eq!(read_raster(&p).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn ppm_roundtrip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let img = Image::new(2, 1, 3, vec![0.0, 0.5, 1.0, -1.0, 2.0, 0.25]).unwrap();
        write_ppm(&p, &img).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"P6"));
        let back = read_ppm(&p).unwrap();
        let expect = [0.0, 128.0 / 255.0, 1.0, 0.0, 1.0, 64.0 / 255.0];
        for (a, b) in back.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
