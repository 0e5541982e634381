//! Independent reference implementations and shared fixtures.
#![allow(dead_code)]

use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vseg_core::losses::{bce, combined_loss, jaccard_loss, LossInputs, LossWeights};
use vseg_core::nn::{Conv2dGeometry, GroupNormParams, Pool2d};
use vseg_core::{Result, Scalar, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(r.random_range(lo..hi)))
}

/// Distinct values spaced 0.05 apart in random order, so max pooling and
/// ReLU stay far from ties and kinks under small perturbations.
pub fn spaced<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.05 + 0.013).collect();
    vals.shuffle(&mut rng(seed));
    Tensor::new(shape.to_vec(), vals.into_iter().map(T::from_f64_lossy).collect()).unwrap()
}

pub fn binary<T: Scalar>(shape: &[usize], p_one: f64, seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| if r.random_bool(p_one) { T::one() } else { T::zero() })
}

pub type GradFn<T> = Box<dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>>;

/// One finite-difference case per differentiable op.
pub fn gradient_cases<T: Scalar>() -> Vec<(&'static str, Vec<Tensor<T>>, GradFn<T>)> {
    let target: Tensor<T> = binary(&[2, 1, 3, 3], 0.4, 77);
    let t1 = target.clone();
    let t2 = target.clone();
    let t3 = target.clone();
    let empty: Tensor<T> = Tensor::zeros([2, 1, 3, 3]);
    let probs = || uniform::<T>(&[2, 1, 3, 3], 0.05, 0.95, 78);
    vec![
        (
            "conv2d 3x3 pad 1",
            vec![uniform(&[2, 2, 4, 5], -1.0, 1.0, 1), uniform(&[3, 2, 3, 3], -0.5, 0.5, 2), uniform(&[3], -0.5, 0.5, 3)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.conv2d(v[0], v[1], Some(v[2]), Conv2dGeometry::new(1, 1, 1))),
        ),
        (
            "conv2d 3x3 stride 2",
            vec![uniform(&[1, 2, 5, 6], -1.0, 1.0, 4), uniform(&[2, 2, 3, 3], -0.5, 0.5, 5)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.conv2d(v[0], v[1], None, Conv2dGeometry::new(2, 1, 1))),
        ),
        (
            "conv2d 1x7",
            vec![uniform(&[1, 2, 3, 8], -1.0, 1.0, 6), uniform(&[2, 2, 1, 7], -0.5, 0.5, 7)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.conv2d(v[0], v[1], None, Conv2dGeometry::new(1, 0, 3))),
        ),
        (
            "conv2d 1x1",
            vec![uniform(&[2, 3, 3, 3], -1.0, 1.0, 8), uniform(&[2, 3, 1, 1], -0.5, 0.5, 9)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.conv2d(v[0], v[1], None, Conv2dGeometry::new(1, 0, 0))),
        ),
        (
            "max_pool2d 3/2 pad 1",
            vec![spaced(&[1, 2, 6, 6], 10)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.max_pool2d(v[0], Pool2d::new(3, 2, 1))),
        ),
        (
            "avg_pool2d 3/1 pad 1",
            vec![uniform(&[1, 2, 4, 5], -1.0, 1.0, 11)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.avg_pool2d(v[0], Pool2d::new(3, 1, 1))),
        ),
        (
            "upsample2x",
            vec![uniform(&[1, 2, 3, 2], -1.0, 1.0, 12)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.upsample2x(v[0])),
        ),
        (
            "concat_channels",
            vec![uniform(&[2, 1, 3, 3], -1.0, 1.0, 13), uniform(&[2, 2, 3, 3], -1.0, 1.0, 14)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.concat_channels(&[v[0], v[1]])),
        ),
        (
            "sigmoid",
            vec![uniform(&[2, 3, 4], -4.0, 4.0, 15)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.sigmoid(v[0])),
        ),
        (
            "relu",
            vec![spaced(&[3, 7], 16)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.relu(v[0])),
        ),
        (
            "group_norm",
            vec![uniform(&[2, 4, 3, 3], -2.0, 2.0, 17), uniform(&[4], 0.5, 1.5, 18), uniform(&[4], -0.5, 0.5, 19)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.group_norm(v[0], v[1], v[2], &GroupNormParams::new(2, 1e-5))),
        ),
        (
            "bce",
            vec![probs()],
            Box::new(move |t: &mut Tape<T>, v: &[Var]| bce(t, &LossInputs::new(v[0], &t1))),
        ),
        (
            "jaccard_loss",
            vec![probs()],
            Box::new(move |t: &mut Tape<T>, v: &[Var]| jaccard_loss(t, &LossInputs::new(v[0], &t2))),
        ),
        (
            "jaccard_loss empty target",
            vec![probs()],
            Box::new(move |t: &mut Tape<T>, v: &[Var]| jaccard_loss(t, &LossInputs::new(v[0], &empty))),
        ),
        (
            "combined_loss",
            vec![probs()],
            Box::new(move |t: &mut Tape<T>, v: &[Var]| {
                combined_loss(t, &LossInputs::new(v[0], &t3), LossWeights::default())
            }),
        ),
        (
            "five-op graph",
            vec![uniform(&[2, 3], 0.2, 1.0, 20), uniform(&[2, 3], 0.2, 1.0, 21), uniform(&[2, 3], -1.0, 1.0, 22)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| {
                let p = t.mul(v[0], v[1])?;
                let q = t.add(p, v[2])?;
                let s = t.sigmoid(q)?;
                let l = t.ln(s)?;
                let d = t.div(l, v[0])?;
                t.mean(d)
            }),
        ),
        (
            "dropout (training, fixed mask)",
            vec![uniform(&[4, 5], -1.0, 1.0, 23)],
            Box::new(|t: &mut Tape<T>, v: &[Var]| t.dropout(v[0], 0.3, true, 5)),
        ),
    ]
}

/// Direct six-loop cross-correlation with zero padding.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, ph: usize, pw: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4("oracle").unwrap();
    let (cout, _, kh, kw) = w.dims4("oracle").unwrap();
    let ho = (h + 2 * ph - kh) / stride + 1;
    let wo = (wd + 2 * pw - kw) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map(|b| b.data()[co]).unwrap_or(0.0);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - ph as isize;
                                let ix = (ox * stride + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((s * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * wdat[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((s * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new([n, cout, ho, wo], out).unwrap()
}

/// Naive pooling over the in-bounds part of every window.
pub fn pool_oracle(x: &Tensor<f64>, window: usize, stride: usize, pad: usize, max: bool) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4("oracle").unwrap();
    let ho = (h + 2 * pad - window) / stride + 1;
    let wo = (w + 2 * pad - window) / stride + 1;
    let mut out = Vec::new();
    for p in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut vals = Vec::new();
                for ky in 0..window {
                    for kx in 0..window {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            vals.push(x.data()[p * h * w + iy as usize * w + ix as usize]);
                        }
                    }
                }
                out.push(if max {
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                });
            }
        }
    }
    Tensor::new([n, c, ho, wo], out).unwrap()
}

/// Two-pass group normalization without affine terms.
pub fn group_norm_oracle(x: &Tensor<f64>, groups: usize, eps: f64) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4("oracle").unwrap();
    let per = c / groups * h * w;
    let mut out = x.data().to_vec();
    for s in 0..n {
        for g in 0..groups {
            let start = (s * groups + g) * per;
            let block = &x.data()[start..start + per];
            let mean = block.iter().sum::<f64>() / per as f64;
            let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
            for i in 0..per {
                out[start + i] = (block[i] - mean) / (var + eps).sqrt();
            }
        }
    }
    Tensor::new([n, c, h, w], out).unwrap()
}

fn reflect(i: isize, n: usize) -> usize {
    // explicit mirror loop: ... 2 1 | 0 1 2 ... n-1 | n-2 ...
    let mut i = i;
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Median of each 5×5 window found by sorting its 25 values.
pub fn median_oracle(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let mut px = [0u8; 3];
        for (ch, out) in px.iter_mut().enumerate() {
            let mut vals = Vec::with_capacity(25);
            for dy in -2..=2 {
                for dx in -2..=2 {
                    let xx = reflect(x as isize + dx, w as usize) as u32;
                    let yy = reflect(y as isize + dy, h as usize) as u32;
                    vals.push(img.get_pixel(xx, yy)[ch]);
                }
            }
            vals.sort_unstable();
            *out = vals[12];
        }
        image::Rgb(px)
    })
}

pub fn random_rgb(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    RgbImage::from_fn(w, h, |_, _| image::Rgb([r.random(), r.random(), r.random()]))
}

pub fn random_mask(w: u32, h: u32, p: f64, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::from_fn(w, h, |_, _| image::Luma([r.random_bool(p) as u8]))
}

/// (tp, fp, tn, fn) by one explicit loop.
pub fn confusion_oracle(pred: &[f32], truth: &[f32], threshold: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        let p = pred[i] as f64 >= threshold;
        let t = truth[i] > 0.5;
        if p && t {
            tp += 1;
        } else if p {
            fp += 1;
        } else if t {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    (tp, fp, tn, fn_)
}
