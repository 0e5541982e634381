//! 5×5 median filter using a sliding 256-bin histogram.

use image::RgbImage;

const RADIUS: isize = 2;
/// 0-based rank of the median among 25 values.
const RANK: u32 = 12;

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Replaces each channel value by the median of its 5×5 neighbourhood,
/// reflecting at the borders.
pub fn median_filter5(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let cols: Vec<usize> = (-RADIUS..w as isize + RADIUS).map(|x| reflect101(x, w)).collect();
    let rows: Vec<usize> = (-RADIUS..h as isize + RADIUS).map(|y| reflect101(y, h)).collect();
    let src = img.as_raw();
    let mut out = img.clone();
    let dst: &mut [u8] = &mut out;

    for ch in 0..3 {
        let at = |x: usize, y: usize| src[(y * w + x) * 3 + ch] as usize;
        for y in 0..h {
            let window_rows = &rows[y..y + 5];
            let mut hist = [0u32; 256];
            for &yy in window_rows {
                for &xx in &cols[0..5] {
                    hist[at(xx, yy)] += 1;
                }
            }
            // median m and the number of window values below it
            let (mut m, mut lt) = (0usize, 0u32);
            while lt + hist[m] <= RANK {
                lt += hist[m];
                m += 1;
            }
            dst[(y * w) * 3 + ch] = m as u8;

            for x in 1..w {
                let (gone, new) = (cols[x - 1], cols[x + 4]);
                for &yy in window_rows {
                    let v = at(gone, yy);
                    hist[v] -= 1;
                    if v < m {
                        lt -= 1;
                    }
                    let v = at(new, yy);
                    hist[v] += 1;
                    if v < m {
                        lt += 1;
                    }
                }
                while lt > RANK {
                    m -= 1;
                    lt -= hist[m];
                }
                while lt + hist[m] <= RANK {
                    lt += hist[m];
                    m += 1;
                }
                dst[(y * w + x) * 3 + ch] = m as u8;
            }
        }
    }
    out
}
