mod common;

use common::*;
use image::{Rgb, RgbImage};
use rand::Rng;
use vseg_core::data::{confusion, metrics, ConfusionCounts};
use vseg_core::nn::{Conv2dGeometry, GroupNormParams, Pool2d};
use vseg_core::preprocess::{clahe, equalize_histogram, gamma_correct, median_filter5};
use vseg_core::{Tape, Tensor};

#[test]
fn conv_matches_six_loop_oracle() {
    let cases = [
        // (x shape, w shape, stride, pad_h, pad_w, bias)
        ([2, 3, 7, 6], [4, 3, 3, 3], 1, 1, 1, true),
        ([1, 2, 9, 8], [3, 2, 3, 3], 2, 1, 1, false),
        ([1, 4, 5, 9], [2, 4, 1, 7], 1, 0, 3, false),
        ([2, 3, 8, 5], [5, 3, 7, 1], 1, 3, 0, true),
        ([1, 5, 4, 4], [6, 5, 1, 1], 1, 0, 0, true),
        ([1, 2, 10, 10], [2, 2, 5, 5], 1, 2, 2, false),
        ([1, 1, 6, 7], [1, 1, 2, 3], 3, 0, 1, true),
    ];
    for (i, (xs, ws, stride, ph, pw, bias)) in cases.into_iter().enumerate() {
        let x: Tensor<f64> = uniform(&xs, -1.0, 1.0, 100 + i as u64);
        let w: Tensor<f64> = uniform(&ws, -1.0, 1.0, 200 + i as u64);
        let b: Tensor<f64> = uniform(&[ws[0]], -1.0, 1.0, 300 + i as u64);
        let expected = conv_oracle(&x, &w, bias.then_some(&b), stride, ph, pw);

        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape
            .conv2d(xv, wv, bias.then_some(bv), Conv2dGeometry::new(stride, ph, pw))
            .unwrap();
        assert_eq!(tape.value(y).shape(), expected.shape(), "case {i}");
        assert!(tape.value(y).max_abs_diff(&expected).unwrap() < 1e-12, "case {i}");

        let mut tape32 = Tape::<f32>::new();
        let (xv, wv, bv) = (tape32.constant(x.cast()), tape32.constant(w.cast()), tape32.constant(b.cast()));
        let y = tape32
            .conv2d(xv, wv, bias.then_some(bv), Conv2dGeometry::new(stride, ph, pw))
            .unwrap();
        let got: Tensor<f64> = tape32.value(y).cast();
        assert!(got.max_abs_diff(&expected).unwrap() < 1e-5, "case {i} f32");
    }
}

#[test]
fn conv_rejects_channel_mismatch_with_shapes() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros([1, 3, 4, 4]));
    let w = tape.constant(Tensor::zeros([2, 2, 3, 3]));
    let err = tape.conv2d(x, w, None, Conv2dGeometry::same(3, 3)).unwrap_err().to_string();
    assert!(err.contains("conv2d") && err.contains("[1, 3, 4, 4]") && err.contains("[2, 2, 3, 3]"), "{err}");
    let tiny = tape.constant(Tensor::zeros([1, 2, 2, 2]));
    assert!(tape.conv2d(tiny, w, None, Conv2dGeometry::new(1, 0, 0)).is_err());
}

#[test]
fn pooling_matches_naive_oracle() {
    for (i, (window, stride, pad)) in [(2, 2, 0), (3, 2, 1), (3, 1, 1), (3, 3, 0), (2, 1, 1)].into_iter().enumerate() {
        let x: Tensor<f64> = uniform(&[2, 3, 7, 8], -1.0, 1.0, 400 + i as u64);
        let pool = Pool2d::new(window, stride, pad);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let m = tape.max_pool2d(xv, pool).unwrap();
        let a = tape.avg_pool2d(xv, pool).unwrap();
        assert_eq!(tape.value(m), &pool_oracle(&x, window, stride, pad, true), "max {pool:?}");
        assert!(tape.value(a).max_abs_diff(&pool_oracle(&x, window, stride, pad, false)).unwrap() < 1e-12);
    }
}

#[test]
fn upsample_and_concat_layout() {
    let x: Tensor<f64> = uniform(&[2, 3, 4, 5], -1.0, 1.0, 7);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let up = tape.upsample2x(xv).unwrap();
    let u = tape.value(up);
    assert_eq!(u.shape(), &[2, 3, 8, 10]);
    for p in 0..6 {
        for y in 0..8 {
            for xx in 0..10 {
                assert_eq!(u.data()[p * 80 + y * 10 + xx], x.data()[p * 20 + (y / 2) * 5 + xx / 2]);
            }
        }
    }
    let other: Tensor<f64> = uniform(&[2, 1, 4, 5], -1.0, 1.0, 8);
    let ov = tape.constant(other.clone());
    let cat = tape.concat_channels(&[xv, ov]).unwrap();
    let c = tape.value(cat);
    assert_eq!(c.shape(), &[2, 4, 4, 5]);
    assert_eq!(&c.data()[0..60], &x.data()[0..60]);
    assert_eq!(&c.data()[60..80], &other.data()[0..20]);
    let bad = tape.constant(Tensor::zeros([2, 1, 4, 4]));
    assert!(tape.concat_channels(&[xv, bad]).is_err());
}

fn group_norm_plain(x: &Tensor<f64>, groups: usize) -> Tensor<f64> {
    let c = x.shape()[1];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::ones([c]));
    let b = tape.constant(Tensor::zeros([c]));
    let y = tape.group_norm(xv, g, b, &GroupNormParams::new(groups, 1e-5)).unwrap();
    tape.value(y).clone()
}

#[test]
fn group_norm_statistics_and_oracle() {
    let x: Tensor<f64> = uniform(&[2, 32, 8, 8], -3.0, 5.0, 9);
    let y = group_norm_plain(&x, 16);
    assert!(y.max_abs_diff(&group_norm_oracle(&x, 16, 1e-5)).unwrap() <= 1e-5);
    let per = 2 * 64;
    for block in y.data().chunks(per) {
        let mean = block.iter().sum::<f64>() / per as f64;
        let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
        assert!(mean.abs() < 1e-5);
        assert!((1.0 - 1e-4..=1.0 + 1e-4).contains(&var), "{var}");
    }
    // batch independence: each sample alone gives the same rows
    for i in 0..2 {
        let alone = group_norm_plain(&x.batch_item(i).unwrap(), 16);
        assert_eq!(alone.data(), &y.data()[i * 2048..(i + 1) * 2048]);
    }
}

#[test]
fn group_norm_applies_affine_per_channel() {
    let x: Tensor<f64> = uniform(&[1, 4, 3, 3], -1.0, 1.0, 10);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::new([4], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
    let b = tape.constant(Tensor::new([4], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let y = tape.group_norm(xv, g, b, &GroupNormParams::new(2, 1e-5)).unwrap();
    let plain = group_norm_oracle(&x, 2, 1e-5);
    for c in 0..4 {
        let (ga, be) = ([1.0, 2.0, -1.0, 0.5][c], c as f64);
        for i in 0..9 {
            let expect = plain.data()[c * 9 + i] * ga + be;
            assert!((tape.value(y).data()[c * 9 + i] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn median_matches_sort_oracle_on_random_images() {
    for seed in 0..100 {
        let img = random_rgb(32, 32, seed);
        assert_eq!(median_filter5(&img), median_oracle(&img), "seed {seed}");
    }
    for (w, h) in [(1, 1), (2, 7), (5, 3), (9, 4)] {
        let img = random_rgb(w, h, 1000 + w as u64);
        assert_eq!(median_filter5(&img), median_oracle(&img), "{w}x{h}");
    }
}

#[test]
fn gamma_matches_formula() {
    let img = RgbImage::from_fn(256, 1, |x, _| Rgb([x as u8; 3]));
    for g in [0.3, 0.5, 1.0, 1.2, 2.2] {
        let out = gamma_correct(&img, g);
        for v in 0..256u32 {
            let expect = (255.0 * (v as f64 / 255.0).powf(g)).round() as u8;
            assert_eq!(out.get_pixel(v, 0)[0], expect);
        }
        assert_eq!(out.get_pixel(0, 0)[0], 0);
        assert_eq!(out.get_pixel(255, 0)[0], 255);
    }
}

#[test]
fn clahe_degenerate_tiling_is_global_equalization() {
    for seed in 0..10 {
        let img = random_rgb(40, 30, seed);
        assert_eq!(clahe(&img, 1e9, (1, 1)), equalize_histogram(&img));
        assert_eq!(clahe(&img, f64::INFINITY, (1, 1)), equalize_histogram(&img));
    }
}

#[test]
fn clahe_widens_low_contrast_gradient() {
    let img = RgbImage::from_fn(64, 64, |x, y| {
        let v = 100 + ((x + y) * 20 / 126) as u8;
        Rgb([v, v / 2 + 10, v / 3 + 20])
    });
    let out = clahe(&img, 2.0, (8, 8));
    for ch in 0..3 {
        let range = |im: &RgbImage| {
            let vals: Vec<u8> = im.pixels().map(|p| p[ch]).collect();
            vals.iter().max().unwrap() - vals.iter().min().unwrap()
        };
        assert!(range(&out) > range(&img), "channel {ch}: {} vs {}", range(&out), range(&img));
    }
}

#[test]
fn confusion_and_metrics_match_brute_force() {
    let mut r = rng(55);
    for seed in 0..100 {
        let pred: Tensor = uniform(&[1, 50, 50], 0.0, 1.0, 2000 + seed);
        let truth: Tensor = binary(&[1, 50, 50], r.random_range(0.0..0.4), 3000 + seed);
        let threshold = if seed % 2 == 0 { 0.5 } else { r.random_range(0.05..0.95) };
        let c = confusion(&pred, &truth, threshold).unwrap();
        let (tp, fp, tn, fn_) = confusion_oracle(pred.data(), truth.data(), threshold);
        assert_eq!(c, ConfusionCounts { tp, fp, tn, fn_ });

        let m = metrics(&c);
        let total = (tp + fp + tn + fn_) as f64;
        assert_eq!(m.accuracy, (tp + tn) as f64 / total);
        assert_eq!(m.sensitivity, if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 });
        assert_eq!(m.specificity, if tn + fp == 0 { 1.0 } else { tn as f64 / (tn + fp) as f64 });
        assert_eq!(m.dice, if 2 * tp + fp + fn_ == 0 { 1.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 });
    }
}

#[test]
fn confusion_rejects_bad_arguments() {
    let a = Tensor::zeros([4]);
    assert!(confusion(&a, &Tensor::zeros([5]), 0.5).is_err());
    assert!(confusion(&a, &a, 1.0).is_err());
}
