//! Image conditioning applied once per image before augmentation:
//! per-channel CLAHE, gamma correction and a 5×5 median filter, all at native
//! resolution. Resizing and normalization happen later, per augmented tile.

mod clahe;
mod median;
mod resize;

pub use clahe::{clahe, equalize_histogram};
pub use image::RgbImage;
pub use median::median_filter5;
pub use resize::{normalize01, resize_bilinear, resize_nearest_gray};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub clip_limit: f64,
    pub tiles: (u32, u32),
    pub gamma: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clip_limit: 2.0,
            tiles: (8, 8),
            gamma: 1.2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiles.0 == 0 || self.tiles.1 == 0 {
            return Err(Error::invalid("preprocess", "CLAHE tile counts must be at least 1"));
        }
        if !(self.clip_limit > 0.0) {
            return Err(Error::invalid("preprocess", "clip_limit must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("preprocess", "gamma must be a positive number"));
        }
        Ok(())
    }
}

/// out = round(255 · (in / 255)^gamma), channel by channel.
pub fn gamma_correct(img: &RgbImage, gamma: f64) -> RgbImage {
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = (255.0 * (v as f64 / 255.0).powf(gamma)).round().clamp(0.0, 255.0) as u8;
    }
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = lut[*c as usize];
        }
    }
    out
}

/// CLAHE, then gamma, then the median filter. Dimensions are preserved.
pub fn preprocess_pipeline(img: &RgbImage, cfg: &PreprocessConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let enhanced = clahe(img, cfg.clip_limit, cfg.tiles);
    let brightened = gamma_correct(&enhanced, cfg.gamma);
    Ok(median_filter5(&brightened))
}
