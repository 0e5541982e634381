//! Synthetic fundus-like image/mask pairs: a reddish noisy background crossed
//! by darker curved "vessels" of varying thickness.

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::Sample;

/// One pair of `size × size` pixels with `curves` quadratic Bézier vessels.
pub fn vessel_pair(size: u32, curves: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut mask = GrayImage::new(size, size);
    for _ in 0..curves {
        let p0 = (rng.random_range(0.0..s), 0.0);
        let p2 = (rng.random_range(0.0..s), s - 1.0);
        let p1 = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (p0, p2) = if rng.random_bool(0.5) {
            (p0, p2)
        } else {
            ((p0.1, p0.0), (p2.1, p2.0))
        };
        let radius: f64 = rng.random_range(0.8..2.2);
        let steps = (4.0 * s) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let u = 1.0 - t;
            let cx = u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0;
            let cy = u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1;
            let r = radius.ceil() as i64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (cx.round() as i64 + dx, cy.round() as i64 + dy);
                    if x < 0 || y < 0 || x >= size as i64 || y >= size as i64 {
                        continue;
                    }
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    if d2 <= radius * radius {
                        mask.put_pixel(x as u32, y as u32, Luma([1]));
                    }
                }
            }
        }
    }

    let image = RgbImage::from_fn(size, size, |x, y| {
        let base: [f64; 3] = if mask.get_pixel(x, y)[0] == 1 {
            [110.0, 40.0, 25.0]
        } else {
            [190.0, 90.0, 50.0]
        };
        let shade = 20.0 * ((x as f64 - s / 2.0).powi(2) + (y as f64 - s / 2.0).powi(2)).sqrt() / s;
        let px = base.map(|b| (b - shade + rng.random_range(-12.0..12.0)).clamp(0.0, 255.0) as u8);
        Rgb(px)
    });
    Sample { image, mask }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_nontrivial() {
        let a = vessel_pair(96, 4, 1);
        assert_eq!(a, vessel_pair(96, 4, 1));
        let v = a.vessel_pixels();
        assert!(v > 100 && v < 96 * 96 / 2, "{v}");
    }
}
