//! Grayscale rasters in `[0, 1]` (1 is paper, 0 is ink) and binary PGM I/O.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed PGM: {0}")]
    Format(String),
    #[error("invalid dimensions {0}x{1}")]
    Dimensions(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    /// Blank page of the given size.
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self { width, height, pixels: vec![fill; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::Dimensions(width, height));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Pixel with edge clamping, for resampling.
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at a continuous position; outside the image reads `fill`.
    pub fn sample(&self, x: f32, y: f32, fill: f32) -> f32 {
        if x < -0.5 || y < -0.5 || x > self.width as f32 - 0.5 || y > self.height as f32 - 0.5 {
            return fill;
        }
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = self.get_clamped(x0, y0) * (1.0 - fx) + self.get_clamped(x0 + 1, y0) * fx;
        let bottom = self.get_clamped(x0, y0 + 1) * (1.0 - fx) + self.get_clamped(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Darkens towards ink: keeps the minimum of the current value and `1 - coverage`.
    pub fn ink(&mut self, x: usize, y: usize, coverage: f32) {
        let p = &mut self.pixels[y * self.width + x];
        *p = p.min(1.0 - coverage.clamp(0.0, 1.0));
    }

    /// First `rows` rows.
    pub fn crop_rows(&self, rows: usize) -> Self {
        let rows = rows.min(self.height);
        Self { width: self.width, height: rows, pixels: self.pixels[..rows * self.width].to_vec() }
    }

    /// Extends to at least `width × height` with `fill` on the right and bottom.
    pub fn pad_to(&self, width: usize, height: usize, fill: f32) -> Self {
        if width <= self.width && height <= self.height {
            return self.clone();
        }
        let mut out = Self::new(width.max(self.width), height.max(self.height), fill);
        for y in 0..self.height {
            let row = &self.pixels[y * self.width..(y + 1) * self.width];
            out.pixels[y * out.width..y * out.width + self.width].copy_from_slice(row);
        }
        out
    }

    pub fn resize(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut out = Self::new(width, height, 1.0);
        for y in 0..height {
            for x in 0..width {
                let v = self.sample((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5, 1.0);
                out.set(x, y, v);
            }
        }
        out
    }

    /// Lowest row containing a pixel darker than `threshold`.
    pub fn last_ink_row(&self, threshold: f32) -> Option<usize> {
        (0..self.height)
            .rev()
            .find(|&y| self.pixels[y * self.width..(y + 1) * self.width].iter().any(|&v| v < threshold))
    }

    /// Horizontal extent `[first, last]` of ink columns.
    pub fn ink_columns(&self, threshold: f32) -> Option<(usize, usize)> {
        let dark = |x: usize| (0..self.height).any(|y| self.get(x, y) < threshold);
        let first = (0..self.width).find(|&x| dark(x))?;
        let last = (0..self.width).rev().find(|&x| dark(x))?;
        Some((first, last))
    }

    pub fn mean_std(&self) -> (f32, f32) {
        let n = self.pixels.len().max(1) as f64;
        let mean = self.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.pixels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean as f32, var.sqrt() as f32)
    }

    /// 8-bit binary PGM.
    pub fn write_pgm(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_all(&bytes)
    }

    /// Reads binary (P5) or plain (P2) PGM with maxval up to 255.
    pub fn read_pgm(r: impl Read) -> Result<Self, ImageError> {
        let mut r = io::BufReader::new(r);
        let mut header = Vec::new();
        let mut token = String::new();
        while header.len() < 4 {
            let mut byte = [0u8; 1];
            if r.read(&mut byte)? == 0 {
                return Err(ImageError::Format("truncated header".into()));
            }
            match byte[0] {
                b'#' if token.is_empty() => {
                    let mut skip = String::new();
                    r.read_line(&mut skip)?;
                }
                b if b.is_ascii_whitespace() => {
                    if !token.is_empty() {
                        header.push(std::mem::take(&mut token));
                    }
                }
                b => token.push(b as char),
            }
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Format(format!("bad number {s:?}")));
        let (width, height, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(ImageError::Format(format!("unsupported maxval {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::Dimensions(width, height));
        }
        let pixels = match header[0].as_str() {
            "P5" => {
                let mut bytes = vec![0u8; width * height];
                r.read_exact(&mut bytes)?;
                bytes.into_iter().map(|b| b as f32 / maxval as f32).collect()
            }
            "P2" => {
                let mut rest = String::new();
                r.read_to_string(&mut rest)?;
                let values = rest.split_whitespace().map(num).collect::<Result<Vec<_>, _>>()?;
                if values.len() != width * height {
                    return Err(ImageError::Format("pixel count mismatch".into()));
                }
                values.into_iter().map(|v| v as f32 / maxval as f32).collect()
            }
            other => return Err(ImageError::Format(format!("unsupported magic {other:?}"))),
        };
        Self::from_pixels(width, height, pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_exact_on_quantized_values() {
        let pixels: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let img = GrayImage::from_pixels(4, 3, pixels).unwrap();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert_eq!(GrayImage::read_pgm(&buf[..]).unwrap(), img);
    }

    #[test]
    fn plain_pgm_with_comment() {
        let img = GrayImage::read_pgm(&b"P2\n# note\n2 1\n4\n0 4\n"[..]).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
        assert!(GrayImage::read_pgm(&b"P6\n1 1\n255\n"[..]).is_err());
    }

    #[test]
    fn crop_and_ink_rows() {
        let mut img = GrayImage::new(3, 5, 1.0);
        img.ink(1, 2, 1.0);
        assert_eq!(img.last_ink_row(0.5), Some(2));
        assert_eq!(img.crop_rows(3).height(), 3);
        assert_eq!(img.ink_columns(0.5), Some((1, 1)));
    }
}
