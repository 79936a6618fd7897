//! Real-valued images in `[0, 1]`, row-major HWC, plus PPM/PGM I/O.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::data(format!("unsupported image shape {rows}x{cols}x{channels}")));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::data(format!(
                "image {rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("image contains non-finite values"));
        }
        Ok(Image { rows, cols, channels, data })
    }

    pub fn filled(rows: usize, cols: usize, channels: usize, value: f64) -> Self {
        Image { rows, cols, channels, data: vec![value; rows * cols * channels] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.cols + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.cols + col) * self.channels + ch] = v;
    }

    /// Single-channel luminance; grayscale images are returned unchanged.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| px.iter().zip(LUMA_WEIGHTS).map(|(v, w)| v * w).sum())
            .collect();
        Image { rows: self.rows, cols: self.cols, channels: 1, data }
    }

    /// Extracts one channel as a grayscale image.
    pub fn channel(&self, ch: usize) -> Image {
        let data = self.data.iter().skip(ch).step_by(self.channels).copied().collect();
        Image { rows: self.rows, cols: self.cols, channels: 1, data }
    }

    /// Bilinear resampling with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, rows: usize, cols: usize) -> Image {
        if (rows, cols) == (self.rows, self.cols) {
            return self.clone();
        }
        let data = resize_bilinear(&self.data, self.rows, self.cols, self.channels, rows, cols);
        Image { rows, cols, channels: self.channels, data }
    }

    /// Left-right flip.
    pub fn mirror(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        let ch = self.channels;
        for r in 0..self.rows {
            for c in (0..self.cols).rev() {
                let i = (r * self.cols + c) * ch;
                data.extend_from_slice(&self.data[i..i + ch]);
            }
        }
        Image { rows: self.rows, cols: self.cols, channels: ch, data }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols, self.channels], self.data.clone()).expect("image dims")
    }

    /// Reads a PPM or PGM (any format the `image` crate can decode works).
    pub fn read(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let data_of = |bytes: &[u8]| bytes.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>();
        if img.color().channel_count() == 1 {
            let g = img.to_luma8();
            Image::new(g.height() as usize, g.width() as usize, 1, data_of(g.as_raw()))
        } else {
            let rgb = img.to_rgb8();
            Image::new(rgb.height() as usize, rgb.width() as usize, 3, data_of(rgb.as_raw()))
        }
    }

    /// 8-bit bytes with `round(255 * clamp(v))`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    /// Writes a binary PGM (1 channel) or PPM (3 channels).
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.cols as u32, self.rows as u32);
        let res = if self.channels == 1 {
            GrayImage::from_raw(w, h, self.to_u8()).expect("buffer size").save_with_format(path, ImageFormat::Pnm)
        } else {
            RgbImage::from_raw(w, h, self.to_u8()).expect("buffer size").save_with_format(path, ImageFormat::Pnm)
        };
        res.map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

pub(crate) fn resize_bilinear(src: &[f64], rows: usize, cols: usize, ch: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(out_rows * out_cols * ch);
    for r in 0..out_rows {
        let (r0, r1, fr) = coord(r, out_rows, rows);
        for c in 0..out_cols {
            let (c0, c1, fc) = coord(c, out_cols, cols);
            for k in 0..ch {
                let at = |rr: usize, cc: usize| src[(rr * cols + cc) * ch + k];
                let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
                let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
                out.push(top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luminance_weights() {
        let img = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(img.luminance().data(), &[0.299]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(img.resize_bilinear(2, 2), img);
        let c = Image::filled(5, 7, 3, 0.3).resize_bilinear(3, 4);
        assert!(c.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn mirror_is_involution() {
        let img = Image::new(2, 3, 3, (0..18).map(|i| i as f64 / 18.0).collect()).unwrap();
        assert_eq!(img.mirror().mirror(), img);
        assert_eq!(img.mirror().get(0, 0, 1), img.get(0, 2, 1));
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Image::new(2, 2, 3, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let path = dir.path().join("a.ppm");
        rgb.write_pnm(&path).unwrap();
        let back = Image::read(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert_eq!(back.to_u8(), rgb.to_u8());
        let gray = rgb.luminance();
        let path = dir.path().join("a.pgm");
        gray.write_pnm(&path).unwrap();
        assert_eq!(Image::read(&path).unwrap().to_u8(), gray.to_u8());
    }
}
