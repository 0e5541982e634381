//! Resampling and conversion to network tensors.

use image::{GrayImage, RgbImage};

use crate::tensor::Tensor;

/// Source coordinate pair and weight for one destination index under
/// half-pixel-centre alignment.
fn taps(dst: u32, src_len: u32, dst_len: u32) -> (u32, u32, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = s.floor() as u32;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resampling to `(height, width)`.
pub fn resize_bilinear(img: &RgbImage, size: (u32, u32)) -> RgbImage {
    let (h, w) = (size.0.max(1), size.1.max(1));
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (w, h) {
        return img.clone();
    }
    let xt: Vec<_> = (0..w).map(|x| taps(x, sw, w)).collect();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        let (y0, y1, fy) = taps(y, sh, h);
        for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
            let (a, b) = (img.get_pixel(x0, y0), img.get_pixel(x1, y0));
            let (c, d) = (img.get_pixel(x0, y1), img.get_pixel(x1, y1));
            let p = out.get_pixel_mut(x as u32, y);
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                p[ch] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Nearest-neighbour resampling of a single-channel image to `(height, width)`;
/// never invents new values, so binary masks stay binary.
pub fn resize_nearest_gray(img: &GrayImage, size: (u32, u32)) -> GrayImage {
    let (h, w) = (size.0.max(1), size.1.max(1));
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (w, h) {
        return img.clone();
    }
    let pick = |d: u32, src: u32, dst: u32| {
        (((d as f64 + 0.5) * src as f64 / dst as f64).floor() as u32).min(src - 1)
    };
    GrayImage::from_fn(w, h, |x, y| *img.get_pixel(pick(x, sw, w), pick(y, sh, h)))
}

/// Divides by 255 into a `[3, H, W]` tensor.
pub fn normalize01(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; 3 * w * h];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * w * h + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}
