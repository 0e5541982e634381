//! Contrast-limited adaptive histogram equalization, per RGB channel.

use image::RgbImage;

const BINS: usize = 256;

/// Equalization lookup table for a histogram of `total` pixels.
///
/// Maps v ↦ round((cdf(v) − cdf_min) · 255 / (total − cdf_min)). A histogram
/// with a single occupied bin carries no contrast and maps to the identity.
fn equalization_lut(hist: &[u32; BINS], total: u32, single_valued: bool) -> [u8; BINS] {
    let mut lut = [0u8; BINS];
    let cdf_min = hist.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if single_valued || total <= cdf_min {
        for (v, out) in lut.iter_mut().enumerate() {
            *out = v as u8;
        }
        return lut;
    }
    let span = (total - cdf_min) as f64;
    let mut cdf = 0u32;
    for (v, out) in lut.iter_mut().enumerate() {
        cdf += hist[v];
        let scaled = (cdf.saturating_sub(cdf_min)) as f64 * 255.0 / span;
        *out = scaled.round().clamp(0.0, 255.0) as u8;
    }
    lut
}

/// Clips every bin at `limit` and spreads the excess evenly over all bins;
/// the remainder goes to evenly spaced bins starting at 0.
fn clip_histogram(hist: &mut [u32; BINS], limit: u32) {
    let mut excess = 0u32;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    if excess == 0 {
        return;
    }
    let per_bin = excess / BINS as u32;
    let residual = (excess % BINS as u32) as usize;
    for h in hist.iter_mut() {
        *h += per_bin;
    }
    if residual > 0 {
        let step = (BINS / residual).max(1);
        for i in (0..BINS).step_by(step).take(residual) {
            hist[i] += 1;
        }
    }
}

/// Global histogram equalization of each channel, with the same mapping
/// convention used by the per-tile CLAHE tables.
pub fn equalize_histogram(img: &RgbImage) -> RgbImage {
    let mut out = img.clone();
    let total = img.width() * img.height();
    for ch in 0..3 {
        let mut hist = [0u32; BINS];
        for p in img.pixels() {
            hist[p[ch] as usize] += 1;
        }
        let single = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let lut = equalization_lut(&hist, total, single);
        for p in out.pixels_mut() {
            p[ch] = lut[p[ch] as usize];
        }
    }
    out
}

/// Tile boundaries `[b_0, …, b_n]` splitting `extent` into `n` near-equal parts.
fn tile_bounds(extent: u32, n: u32) -> Vec<u32> {
    (0..=n).map(|i| (i as u64 * extent as u64 / n as u64) as u32).collect()
}

/// For a pixel coordinate, the two neighbouring tile indices and the weight
/// of the second one, based on tile centres.
fn interp_weights(pos: u32, centers: &[f64]) -> (usize, usize, f64) {
    let p = pos as f64;
    let last = centers.len() - 1;
    if p <= centers[0] {
        return (0, 0, 0.0);
    }
    if p >= centers[last] {
        return (last, last, 0.0);
    }
    let j = centers.iter().rposition(|&c| c <= p).unwrap_or(0);
    let w = (p - centers[j]) / (centers[j + 1] - centers[j]);
    (j, j + 1, w)
}

/// CLAHE with `tiles = (tiles_x, tiles_y)`.
///
/// Each channel gets a 256-bin histogram per tile, clipped at
/// `clip_limit × (tile pixels / 256)` with the excess redistributed
/// uniformly, turned into an equalization table, and the tables of the four
/// nearest tile centres are blended bilinearly per pixel. Tile counts larger
/// than the image extent are reduced to it.
pub fn clahe(img: &RgbImage, clip_limit: f64, tiles: (u32, u32)) -> RgbImage {
    let (w, h) = img.dimensions();
    let tx = tiles.0.clamp(1, w.max(1));
    let ty = tiles.1.clamp(1, h.max(1));
    let xb = tile_bounds(w, tx);
    let yb = tile_bounds(h, ty);
    let center = |b: &[u32], i: usize| (b[i] as f64 + b[i + 1] as f64 - 1.0) / 2.0;
    let xc: Vec<f64> = (0..tx as usize).map(|i| center(&xb, i)).collect();
    let yc: Vec<f64> = (0..ty as usize).map(|i| center(&yb, i)).collect();

    let mut out = img.clone();
    for ch in 0..3 {
        // luts[ty][tx]
        let mut luts = vec![[0u8; BINS]; (tx * ty) as usize];
        for j in 0..ty as usize {
            for i in 0..tx as usize {
                let mut hist = [0u32; BINS];
                for y in yb[j]..yb[j + 1] {
                    for x in xb[i]..xb[i + 1] {
                        hist[img.get_pixel(x, y)[ch] as usize] += 1;
                    }
                }
                let total = (xb[i + 1] - xb[i]) * (yb[j + 1] - yb[j]);
                let single = hist.iter().filter(|&&c| c > 0).count() <= 1;
                let limit = (clip_limit * total as f64 / BINS as f64).floor();
                if limit.is_finite() && limit < total as f64 {
                    clip_histogram(&mut hist, (limit as u32).max(1));
                }
                luts[j * tx as usize + i] = equalization_lut(&hist, total, single);
            }
        }

        let xw: Vec<(usize, usize, f64)> = (0..w).map(|x| interp_weights(x, &xc)).collect();
        for y in 0..h {
            let (j0, j1, wy) = interp_weights(y, &yc);
            for (x, &(i0, i1, wx)) in xw.iter().enumerate() {
                let v = img.get_pixel(x as u32, y)[ch] as usize;
                let at = |j: usize, i: usize| luts[j * tx as usize + i][v] as f64;
                let top = at(j0, i0) * (1.0 - wx) + at(j0, i1) * wx;
                let bottom = at(j1, i0) * (1.0 - wx) + at(j1, i1) * wx;
                let blended = top * (1.0 - wy) + bottom * wy;
                out.get_pixel_mut(x as u32, y)[ch] = blended.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}
