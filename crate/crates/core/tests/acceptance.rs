//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p vseg-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use image::{Rgb, RgbImage};
use vseg_core::augment::{augment_sample, crop_set, flip_set, rotate_set, Sample};
use vseg_core::data::{confusion, make_split, metrics, DatasetRecord, Protocol};
use vseg_core::losses::{bce, combined_loss, jaccard_loss, LossInputs, LossWeights};
use vseg_core::model::{Model, ModelConfig, WeightArchive, WidthFactor};
use vseg_core::nn::GroupNormParams;
use vseg_core::preprocess::{clahe, equalize_histogram, gamma_correct, median_filter5};
use vseg_core::synthetic::vessel_pair;
use vseg_core::tensor::finite_diff_check_many;
use vseg_core::train::{
    fit, CallbackConfig, CallbackState, EpochRecord, Event, NAdamConfig, TensorDataset, TrainConfig, TrainingLog,
};
use vseg_core::{Scalar, Tape, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn eighth() -> WidthFactor {
    WidthFactor::new(1, 8).unwrap()
}

fn small_model(size: usize, seed: u64) -> Model {
    Model::new(ModelConfig {
        width_factor: eighth(),
        input_size: (size, size),
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn gradient_suite<T: Scalar>(step: f64, tol: f64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (name, inputs, f) in gradient_cases::<T>() {
        let report = finite_diff_check_many(&f, &inputs, step).map_err(|e| format!("{name}: {e}"))?;
        ensure!(report.passes(tol), "{} {name}: rel error {:e}", T::NAME, report.max_rel_error);
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let w32 = gradient_suite::<f32>(1e-3, 1e-3)?;
    let w64 = gradient_suite::<f64>(1e-5, 1e-5)?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("{} ops, worst rel error f32 {w32:.1e}, f64 {w64:.1e}, {secs:.1} s", gradient_cases::<f32>().len()))
}

fn plain_group_norm(x: &Tensor) -> Tensor {
    let c = x.shape()[1];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::ones([c]));
    let b = tape.constant(Tensor::zeros([c]));
    let y = tape.group_norm(xv, g, b, &GroupNormParams::new(16, 1e-5)).map_err(|e| e.to_string()).unwrap();
    tape.value(y).clone()
}

fn c2_group_norm() -> Outcome {
    let x: Tensor = uniform(&[2, 32, 8, 8], -3.0, 5.0, 2);
    let y = plain_group_norm(&x);
    let per = 2 * 64;
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for block in y.data().chunks(per) {
        let mean = block.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let var = block.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per as f64;
        worst_mean = worst_mean.max(mean.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    ensure!(worst_mean < 1e-5, "group mean {worst_mean:e}");
    ensure!(worst_var <= 1e-4, "group variance off by {worst_var:e}");
    let diff = y.cast::<f64>().max_abs_diff(&group_norm_oracle(&x.cast(), 16, 1e-5)).unwrap();
    ensure!(diff <= 1e-5, "oracle diff {diff:e}");
    for i in 0..2 {
        let alone = plain_group_norm(&x.batch_item(i).unwrap());
        ensure!(alone.data() == &y.data()[i * 2048..(i + 1) * 2048], "sample {i} depends on the batch");
    }
    Ok(format!("|mean| {worst_mean:.1e}, |var-1| {worst_var:.1e}, oracle diff {diff:.1e}, batch independent"))
}

fn loss_value(
    f: fn(&mut Tape<f64>, &LossInputs<'_, f64>) -> vseg_core::Result<vseg_core::Var>,
    p: &Tensor<f64>,
    y: &Tensor<f64>,
) -> f64 {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let l = f(&mut tape, &LossInputs::new(pv, y)).unwrap();
    tape.value(l).item().unwrap()
}

fn combined(tape: &mut Tape<f64>, i: &LossInputs<'_, f64>) -> vseg_core::Result<vseg_core::Var> {
    combined_loss(tape, i, LossWeights::default())
}

fn c3_losses() -> Outcome {
    let y: Tensor<f64> = binary(&[1, 1, 16, 16], 0.2, 3);
    let b = loss_value(bce, &y, &y);
    let j = loss_value(jaccard_loss, &y, &y);
    let f = loss_value(combined, &y, &y);
    ensure!(b <= 1e-6, "perfect BCE {b:e}");
    ensure!(j == 0.0, "perfect jaccard {j:e}");
    // the log clamp keeps BCE a hair above zero, so the combined loss inherits
    // the BCE tolerance
    ensure!(f <= 1e-6, "perfect combined {f:e}");
    let zero = loss_value(jaccard_loss, &Tensor::zeros([1, 1, 16, 16]), &y);
    ensure!(zero == 1.0, "all-zero jaccard {zero}");
    let p = Tensor::new([3], vec![0.5, 0.25, 0.25]).unwrap();
    let t = Tensor::new([3], vec![1.0, 0.0, 0.0]).unwrap();
    let hand = loss_value(jaccard_loss, &p, &t);
    ensure!((hand - 2.0 / 3.0).abs() < 1e-6, "hand example {hand}");

    let mut r = rng(33);
    for i in 0..10_000u64 {
        let n = 1 + (i as usize % 50);
        let p: Tensor<f64> = uniform(&[n], 0.0, 1.0, i);
        let t: Tensor<f64> = binary(&[n], rand::Rng::random_range(&mut r, 0.0..1.0), i + 1_000_000);
        let v = loss_value(jaccard_loss, &p, &t);
        ensure!((0.0..=1.0).contains(&v), "instance {i}: {v}");
    }

    let target: Tensor<f64> = binary(&[1, 1, 8, 8], 0.3, 4);
    let pred: Tensor<f64> = uniform(&[1, 1, 8, 8], 0.0, 1.0, 5);
    let mut tape = Tape::new();
    let pv = tape.param(pred.clone());
    let l = jaccard_loss(&mut tape, &LossInputs::new(pv, &target)).unwrap();
    tape.backward(l).unwrap();
    let vessels = target.data().iter().filter(|&&v| v == 1.0).count() as f64;
    let bg: f64 = pred.data().iter().zip(target.data()).filter(|(_, &v)| v == 0.0).map(|(p, _)| p).sum();
    let mut worst = 0.0f64;
    for (g, &t) in tape.grad(pv).unwrap().data().iter().zip(target.data()) {
        if t == 1.0 {
            worst = worst.max((g + 1.0 / (vessels + bg)).abs());
        }
    }
    ensure!(worst < 1e-6, "vessel gradient off by {worst:e}");
    Ok(format!("BCE {b:.1e}, L_f {f:.1e}, 2/3 to {:.0e}, 10^4 instances in [0,1], grad err {worst:.1e}", (hand - 2.0 / 3.0).abs()))
}

fn coordinate_sample(w: u32, h: u32, seed: u64) -> Sample {
    let image = RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, 0]));
    Sample::new(image, random_mask(w, h, 0.3, seed)).unwrap()
}

fn c4_augmentation() -> Outcome {
    let one = coordinate_sample(13, 10, 1);
    let variants = augment_sample(&one).map_err(|e| e.to_string())?;
    ensure!(variants.len() == 60, "1 pair gave {}", variants.len());
    let mut total = 0;
    for i in 0..271 {
        total += augment_sample(&coordinate_sample(6 + i % 5, 4 + i % 3, i as u64)).unwrap().len();
    }
    ensure!(total == 16_260, "271 pairs gave {total}");

    for seed in 0..20 {
        let s = coordinate_sample(11 + seed as u32, 7 + seed as u32 % 4, seed);
        let n = s.vessel_pixels();
        for t in rotate_set(&s).iter().chain(&flip_set(&s)) {
            ensure!(t.vessel_pixels() == n, "vessel count changed");
        }
        let crops = crop_set(&s).unwrap();
        ensure!(crops[1].vessel_pixels() + crops[2].vessel_pixels() == n, "left + right != whole");
        ensure!(crops[3].vessel_pixels() + crops[4].vessel_pixels() == n, "top + bottom != whole");
        for v in augment_sample(&s).unwrap() {
            for (px, m) in v.image.pixels().zip(v.mask.pixels()) {
                ensure!(m[0] == s.mask.get_pixel(px[0] as u32, px[1] as u32)[0], "image and mask transformed differently");
            }
        }
    }
    Ok("1 -> 60, 271 -> 16260, counts conserved, coordinate grid consistent".into())
}

fn c5_preprocessing() -> Outcome {
    for seed in 0..100 {
        let img = random_rgb(32, 32, 500 + seed);
        ensure!(median_filter5(&img) == median_oracle(&img), "median differs on image {seed}");
    }
    let ends = RgbImage::from_fn(2, 1, |x, _| Rgb([if x == 0 { 0 } else { 255 }; 3]));
    let g = gamma_correct(&ends, 1.2);
    ensure!(g.get_pixel(0, 0)[0] == 0 && g.get_pixel(1, 0)[0] == 255, "gamma endpoints moved");
    for seed in 0..10 {
        let img = random_rgb(40, 30, seed);
        ensure!(clahe(&img, f64::INFINITY, (1, 1)) == equalize_histogram(&img), "degenerate CLAHE differs");
    }
    Ok("median == oracle on 100 images, gamma 0->0 255->255, 1x1 unclipped CLAHE == equalization".into())
}

fn c6_metrics() -> Outcome {
    for seed in 0..100 {
        let pred: Tensor = uniform(&[1, 50, 50], 0.0, 1.0, seed);
        let truth: Tensor = binary(&[1, 50, 50], 0.15, seed + 100);
        let c = confusion(&pred, &truth, 0.5).map_err(|e| e.to_string())?;
        let (tp, fp, tn, fn_) = confusion_oracle(pred.data(), truth.data(), 0.5);
        ensure!((c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_), "counts differ on pair {seed}");
        let m = metrics(&c);
        let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
        ensure!(m.accuracy == (tp + tn) / (tp + tn + fp + fn_), "accuracy");
        ensure!(m.sensitivity == tp / (tp + fn_), "sensitivity");
        ensure!(m.specificity == tn / (tn + fp), "specificity");
        ensure!(m.dice == 2.0 * tp / (2.0 * tp + fp + fn_), "dice");
        let prec = tp / (tp + fp);
        let harmonic = 2.0 * m.sensitivity * prec / (m.sensitivity + prec);
        ensure!((m.dice - harmonic).abs() < 1e-9, "DC identity off by {:e}", (m.dice - harmonic).abs());
    }
    Ok("100 pairs exact, DC = 2 Sen Prec / (Sen + Prec) within 1e-9".into())
}

fn c7_shapes() -> Outcome {
    let mut shown = Vec::new();
    for size in [224usize, 64, 96] {
        let model = small_model(size, 7);
        let x: Tensor = uniform(&[2, 3, size, size], 0.0, 1.0, size as u64);
        let y = model.predict(&x).map_err(|e| e.to_string())?;
        ensure!(y.shape() == [2, 1, size, size], "{size}: shape {:?}", y.shape());
        ensure!(y.data().iter().all(|&v| v > 0.0 && v < 1.0), "{size}: output outside (0,1)");
        shown.push(format!("{:?}", y.shape()));
    }
    Ok(shown.join(", "))
}

fn c8_overfit() -> Outcome {
    let start = Instant::now();
    let size = 96u32;
    let pairs: Vec<(Tensor, Tensor)> = (0..4)
        .map(|i| vseg_core::augment::finalize(&vessel_pair(size, 4, i), (size, size)))
        .collect();
    let data = TensorDataset::new(pairs.clone());
    let mut model = small_model(size as usize, 1);
    let cfg = TrainConfig {
        max_epochs: 300,
        seed: 1,
        optimizer: NAdamConfig { lr: 1e-3, ..Default::default() },
        ..Default::default()
    };
    let log = fit(&mut model, &data, &data, &cfg).map_err(|e| e.to_string())?;
    let mut dice = Vec::new();
    for (x, y) in &pairs {
        let p = model.predict(&x.clone().reshape([1, 3, size as usize, size as usize]).unwrap()).unwrap();
        let c = confusion(&p.reshape([1, size as usize, size as usize]).unwrap(), y, 0.5).unwrap();
        dice.push(metrics(&c).dice);
    }
    let mean = dice.iter().sum::<f64>() / dice.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure!(mean >= 0.95, "training Dice {mean:.4} after {} epochs", log.epochs.len());
    ensure!(secs < 900.0, "took {secs:.0} s");
    Ok(format!("training Dice {mean:.4} after {} epochs, {secs:.0} s", log.epochs.len()))
}

fn c9_callbacks() -> Outcome {
    let mut state = CallbackState::new(CallbackConfig::default(), 1e-4);
    let mut log = TrainingLog::default();
    let script = [3.0, 2.5].into_iter().chain(std::iter::repeat(2.6).take(150));
    for (i, loss) in script.enumerate() {
        let epoch = i + 1;
        let lr = state.lr;
        let events = state.on_epoch_end(epoch, loss);
        let stop = events.contains(&Event::Stop);
        log.epochs.push(EpochRecord { epoch, train_loss: loss, val_loss: loss, lr, events });
        if stop {
            break;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("log.csv");
    log.write_csv(&path).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&path).unwrap();
    let logged: Vec<(usize, String)> = text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (!f[4].is_empty()).then(|| (f[0].parse().unwrap(), f[4].to_string()))
        })
        .collect();
    let expected: Vec<(usize, String)> = [(1, "checkpoint"), (2, "checkpoint"), (27, "reduce_lr"), (52, "reduce_lr"), (77, "reduce_lr"), (102, "stop")]
        .iter()
        .map(|&(e, s)| (e, s.to_string()))
        .collect();
    ensure!(logged == expected, "logged events {logged:?}");
    ensure!(log.epochs.len() == 102, "ran {} epochs", log.epochs.len());
    let lr_after_27 = log.epochs[27].lr;
    ensure!(lr_after_27 == 5e-5, "lr after first reduction {lr_after_27}");
    Ok("checkpoints 1,2; lr halved at 27, 52, 77; stop at 102".into())
}

fn records(ids: &[String]) -> Vec<DatasetRecord> {
    ids.iter()
        .map(|id| DatasetRecord::new(id.clone(), format!("{id}.png").into(), format!("{id}.png").into()))
        .collect()
}

fn c10_splits() -> Outcome {
    let stare: Vec<String> = (0..20).map(|i| format!("im{i:04}")).collect();
    let plan = make_split(&records(&stare), Protocol::StareLoocv, 0).map_err(|e| e.to_string())?;
    ensure!(plan.folds.len() == 20, "STARE folds {}", plan.folds.len());
    ensure!(plan.folds.iter().all(|f| f.train.len() == 19 && f.test.len() == 1), "STARE fold sizes");
    let mut covered: Vec<String> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
    covered.sort();
    ensure!(covered == stare, "STARE test coverage incomplete");

    let chase: Vec<String> = (1..=14).flat_map(|i| [format!("Image_{i:02}L"), format!("Image_{i:02}R")]).collect();
    let c = make_split(&records(&chase), Protocol::ChaseFirst20, 0).map_err(|e| e.to_string())?;
    ensure!((c.folds[0].train.len(), c.folds[0].test.len()) == (20, 8), "CHASE sizes");

    let hrf: Vec<String> = ["h", "dr", "g"].iter().flat_map(|c| (1..=15).map(move |i| format!("{i:02}_{c}"))).collect();
    let h = make_split(&records(&hrf), Protocol::Hrf5PerCat, 0).map_err(|e| e.to_string())?;
    ensure!((h.folds[0].train.len(), h.folds[0].test.len()) == (15, 30), "HRF sizes");

    for protocol in [Protocol::StareLoocv, Protocol::Random15] {
        let a = make_split(&records(&stare), protocol, 42).unwrap().to_csv();
        let b = make_split(&records(&stare), protocol, 42).unwrap().to_csv();
        ensure!(a.as_bytes() == b.as_bytes(), "{protocol} not reproducible");
    }
    Ok("STARE 20 x 19/1 full coverage, CHASE (20, 8), HRF (15, 30), reruns byte-identical".into())
}

fn c11_archive() -> Outcome {
    let model = small_model(64, 3);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("w.vswa");
    model.save_weights(&path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).unwrap();
    let loaded = WeightArchive::load(&path).map_err(|e| e.to_string())?;
    ensure!(loaded.to_bytes() == bytes, "re-serialized bytes differ");
    let mut copy = small_model(64, 4);
    copy.load_weights(&path, true).map_err(|e| e.to_string())?;
    let bit_exact = model
        .values()
        .iter()
        .zip(copy.values())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure!(bit_exact, "weights changed in the round trip");

    let mut encoder = model.to_archive();
    encoder.retain(|n| n.starts_with("encoder."));
    let mut target = small_model(64, 5);
    let report = target.apply_archive(&encoder, false).map_err(|e| e.to_string())?;
    let want_loaded: Vec<String> = encoder.names().map(str::to_string).collect();
    let want_missing: Vec<String> =
        target.specs().iter().map(|s| s.name.clone()).filter(|n| !n.starts_with("encoder.")).collect();
    ensure!(report.loaded == want_loaded, "loaded set differs");
    ensure!(report.missing == want_missing, "missing set differs");
    Ok(format!(
        "{} tensors bit-exact; partial load {} loaded / {} missing",
        model.values().len(),
        report.loaded.len(),
        report.missing.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", c1_gradients),
        ("group norm", c2_group_norm),
        ("loss identities", c3_losses),
        ("augmentation", c4_augmentation),
        ("preprocessing oracles", c5_preprocessing),
        ("metrics", c6_metrics),
        ("shape contract", c7_shapes),
        ("end-to-end overfit", c8_overfit),
        ("callback trace", c9_callbacks),
        ("split protocols", c10_splits),
        ("weight archive", c11_archive),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} ({secs:.1} s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why} ({secs:.1} s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
