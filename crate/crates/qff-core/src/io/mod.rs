//! File formats: PPM images (PNG behind the `png` feature), run
//! configuration files, training checkpoints, and CSV outputs.

pub mod checkpoint;
pub mod config;
pub mod csvout;
#[cfg(feature = "png")]
pub mod png;
pub mod ppm;

use std::path::Path;

use crate::error::{QffError, Result};

/// An RGB image with float channels in `[0, 1]`, interleaved row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(QffError::Contract(format!(
                "image data has {} floats, {}x{} rgb needs {}",
                data.len(),
                width,
                height,
                width * height * 3
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let base = (y * self.width + x) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let base = (y * self.width + x) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(QffError::Format(format!(
                "pixel payload has {} bytes, {}x{} rgb needs {}",
                bytes.len(),
                width,
                height,
                width * height * 3
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    /// Quantize to 8-bit channels, clamping into `[0, 1]` first.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Read an image by extension: `.ppm` always, `.png` when the `png` feature
/// is enabled.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => ppm::read_ppm(path),
        #[cfg(feature = "png")]
        Some("png") => png::read_png(path),
        other => Err(QffError::Format(format!(
            "unsupported image extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}
