use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major RGBA8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 4 * width * height {
            return Err(Error::Dimension(format!(
                "{} bytes for a {width}x{height} RGBA image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgba: [u8; 4]) -> Self {
        let mut pixels = Vec::with_capacity(4 * width * height);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgba);
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = 4 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgba: [u8; 4]) {
        let i = 4 * (y * self.width + x);
        self.pixels[i..i + 4].copy_from_slice(&rgba);
    }

    /// RGB bytes without alpha, as used by binary PPM.
    pub fn rgb_bytes(&self) -> Vec<u8> {
        self.pixels.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDiff {
    /// Mean absolute difference over every channel of every pixel.
    pub mean_abs: f64,
    pub max: u8,
    /// Gray level = largest channel difference of the pixel.
    pub heatmap: Image,
    pub differing_pixels: usize,
}

pub fn image_diff(a: &Image, b: &Image) -> Result<ImageDiff> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "cannot diff {}x{} against {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut sum = 0u64;
    let mut max = 0u8;
    let mut differing = 0;
    let mut heat = Vec::with_capacity(a.pixels.len());
    for (pa, pb) in a.pixels.chunks_exact(4).zip(b.pixels.chunks_exact(4)) {
        let mut m = 0u8;
        for c in 0..4 {
            let d = pa[c].abs_diff(pb[c]);
            sum += d as u64;
            m = m.max(d);
        }
        if m > 0 {
            differing += 1;
        }
        max = max.max(m);
        heat.extend_from_slice(&[m, m, m, 255]);
    }
    let count = a.pixels.len().max(1) as f64;
    Ok(ImageDiff {
        mean_abs: sum as f64 / count,
        max,
        heatmap: Image { width: a.width, height: a.height, pixels: heat },
        differing_pixels: differing,
    })
}
