//! The five subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use vseg_core::augment::{augment_sample, variant_suffix, Sample};
use vseg_core::data::{
    confusion, evaluate, list_images, load_dataset, load_rgb, make_split, metrics, overlay, save_mask, save_rgb,
    segment_image, DatasetRecord, Fold, Protocol, Segmenter,
};
use vseg_core::model::{Model, WidthFactor};
use vseg_core::preprocess::preprocess_pipeline;
use vseg_core::train::{fit, split_train_val, AugmentedDataset, ResizedDataset, SampleSource};

use crate::config::{RunConfig, ALL_RECORDS};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Conditions every image in `input` and writes `<stem>.png` to `output`.
pub fn preprocess(cfg: &RunConfig, input: &Path, output: &Path) -> Result<(), CliError> {
    let pcfg = cfg.preprocess_config();
    pcfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let files = list_images(input)?;
    log::info!("preprocess: {} files in {}", files.len(), input.display());
    create_dir(output)?;
    let failures: Vec<String> = files
        .par_iter()
        .filter_map(|(stem, path)| {
            let result = load_rgb(path)
                .and_then(|img| preprocess_pipeline(&img, &pcfg))
                .and_then(|out| save_rgb(&out, &output.join(format!("{stem}.png"))));
            match result {
                Ok(()) => {
                    log::info!("{} -> {stem}.png", path.display());
                    None
                }
                Err(e) => {
                    log::error!("{e}");
                    Some(path.display().to_string())
                }
            }
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} file(s) failed: {}", failures.len(), failures.join(", "))))
    }
}

/// Writes the 60 variants of every pair under `input` to
/// `output/images` and `output/masks`.
pub fn augment(input: &Path, output: &Path) -> Result<(), CliError> {
    let records = load_dataset(input)?;
    let (images, masks) = (output.join("images"), output.join("masks"));
    create_dir(&images)?;
    create_dir(&masks)?;
    let written: Vec<usize> = records
        .par_iter()
        .map(|r| -> Result<usize, CliError> {
            let variants = augment_sample(&r.load_sample()?)?;
            for (i, v) in variants.iter().enumerate() {
                let name = format!("{}{}.png", r.id, variant_suffix(i));
                save_rgb(&v.image, &images.join(&name))?;
                save_mask(&v.mask, &masks.join(&name))?;
            }
            Ok(variants.len())
        })
        .collect::<Result<_, _>>()?;
    log::info!("augment: {} pairs -> {} pairs", records.len(), written.iter().sum::<usize>());
    Ok(())
}

/// Folds for `cfg.train.protocol`; `none` puts every record in one
/// training fold.
fn folds(cfg: &RunConfig, records: &[DatasetRecord], seed: u64) -> Result<(Vec<Fold>, String), CliError> {
    if cfg.train.protocol == ALL_RECORDS {
        let fold = Fold {
            train: records.iter().map(|r| r.id.clone()).collect(),
            test: Vec::new(),
        };
        let mut csv = String::from("fold,id,role\n");
        for id in &fold.train {
            let _ = writeln!(csv, "0,{id},train");
        }
        return Ok((vec![fold], csv));
    }
    let protocol: Protocol = cfg.train.protocol.parse().map_err(|e: vseg_core::Error| CliError::Config(e.to_string()))?;
    let plan = make_split(records, protocol, seed)?;
    let csv = plan.to_csv();
    Ok((plan.folds, csv))
}

fn mix(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn load_conditioned(records: &[&DatasetRecord], cfg: &RunConfig) -> Result<Vec<Sample>, CliError> {
    let pcfg = cfg.preprocess_config();
    records
        .par_iter()
        .map(|r| {
            let mut s = r.load_sample()?;
            s.image = preprocess_pipeline(&s.image, &pcfg)?;
            Ok(s)
        })
        .collect()
}

fn source(samples: Vec<Sample>, size: (u32, u32), augmented: bool) -> Box<dyn SampleSource> {
    if augmented {
        Box::new(AugmentedDataset { samples, size })
    } else {
        Box::new(ResizedDataset { samples, size })
    }
}

/// Mean per-image Dice of `model` on `data` at `threshold`.
fn mean_dice(model: &Model, data: &dyn SampleSource, threshold: f64) -> Result<f64, CliError> {
    let scores: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| -> Result<f64, CliError> {
            let (x, y) = data.get(i)?;
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let p = model.predict(&x.reshape([1, c, h, w])?)?;
            Ok(metrics(&confusion(&p.reshape([1, h, w])?, &y, threshold)?).dice)
        })
        .collect::<Result<_, _>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

pub struct TrainArgs {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub width_factor: Option<WidthFactor>,
    pub init_weights: Option<PathBuf>,
}

/// Trains one model per fold; writes `fold{k}.vswa`, `fold{k}_log.csv`,
/// `split.csv` and `train_report.csv` to the output directory.
pub fn train(cfg: &RunConfig, args: TrainArgs) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let mut mcfg = cfg.model_config(seed)?;
    if let Some(w) = args.width_factor {
        mcfg.width_factor = w;
    }
    let tcfg = cfg.train_config(seed)?;
    let data_dir = args.data.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let out = args.out.unwrap_or_else(|| cfg.paths.output_dir.clone());
    let init = args.init_weights.or_else(|| cfg.model.init_weights.clone());
    let size = (mcfg.input_size.0 as u32, mcfg.input_size.1 as u32);

    let records = load_dataset(&data_dir)?;
    let (folds, split_csv) = folds(cfg, &records, seed)?;
    create_dir(&out)?;
    write_text(&out.join("split.csv"), &split_csv)?;
    log::info!("train: {} records, {} fold(s), protocol {}", records.len(), folds.len(), cfg.train.protocol);

    let mut report = String::from("fold,epochs,best_epoch,best_val_loss,train_dice\n");
    for (k, fold) in folds.iter().enumerate() {
        let members: Vec<&DatasetRecord> = records.iter().filter(|r| fold.train.contains(&r.id)).collect();
        let samples = load_conditioned(&members, cfg)?;
        let (train_s, val_s) = split_train_val(&samples, tcfg.val_fraction, mix(seed, k))?;
        let train_src = source(train_s, size, cfg.augment.enabled);
        let val_src = source(val_s, size, cfg.augment.enabled);

        let mut model = Model::new(mcfg.clone())?;
        if let Some(path) = &init {
            let loaded = model.load_weights(path, false)?;
            log::info!("init weights {}: loaded {:?}", path.display(), loaded.loaded);
            log::info!("init weights {}: missing {:?}", path.display(), loaded.missing);
            if !loaded.skipped.is_empty() {
                log::warn!("init weights {}: skipped {:?}", path.display(), loaded.skipped);
            }
        }
        let weights = out.join(format!("fold{k}.vswa"));
        let fold_cfg = vseg_core::train::TrainConfig {
            checkpoint_path: Some(weights.clone()),
            seed: mix(seed, k),
            ..tcfg.clone()
        };
        log::info!(
            "fold {k}: {} training / {} validation items, {} parameters",
            train_src.len(),
            val_src.len(),
            model.parameter_count()
        );
        let log = fit(&mut model, train_src.as_ref(), val_src.as_ref(), &fold_cfg)?;
        model.save_weights(&weights)?;
        log.write_csv(out.join(format!("fold{k}_log.csv")))?;

        let plain = ResizedDataset { samples, size };
        let dice = mean_dice(&model, &plain, cfg.eval.threshold)?;
        let (best_epoch, best_loss) = log
            .best()
            .map(|r| (r.epoch.to_string(), format!("{:.6}", r.val_loss)))
            .unwrap_or_default();
        log::info!("fold {k}: final train Dice {dice:.4} after {} epochs", log.epochs.len());
        let _ = writeln!(report, "{k},{},{best_epoch},{best_loss},{dice:.6}", log.epochs.len());
    }
    write_text(&out.join("train_report.csv"), &report)
}

fn load_model(cfg: &RunConfig, width: Option<WidthFactor>, path: &Path) -> Result<Model, CliError> {
    let mut mcfg = cfg.model_config(0)?;
    if let Some(w) = width {
        mcfg.width_factor = w;
    }
    let mut model = Model::new(mcfg)?;
    model.load_weights(path, true)?;
    Ok(model)
}

/// Writes `<stem>_mask.png` and `<stem>_overlay.png` for every image.
pub fn segment(
    cfg: &RunConfig,
    weights: &Path,
    width: Option<WidthFactor>,
    images: &[PathBuf],
    out: &Path,
) -> Result<(), CliError> {
    let ecfg = cfg.eval_config()?;
    let model = load_model(cfg, width, weights)?;
    create_dir(out)?;
    for path in images {
        let img = load_rgb(path)?;
        let (_, mask) = segment_image(&model, &img, &ecfg)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Data(format!("{}: no file name", path.display())))?;
        save_mask(&mask, &out.join(format!("{stem}_mask.png")))?;
        save_rgb(&overlay(&img, &mask), &out.join(format!("{stem}_overlay.png")))?;
        let vessels = mask.pixels().filter(|p| p[0] > 0).count();
        log::info!("{}: {vessels} vessel pixels", path.display());
    }
    Ok(())
}

/// Scores `fold{k}.vswa` from `weights_dir` on fold `k`'s test images and
/// writes the metric CSV.
pub fn evaluate_cmd(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    weights_dir: Option<PathBuf>,
    width: Option<WidthFactor>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if cfg.train.protocol == ALL_RECORDS {
        return Err(CliError::Config(format!("protocol {ALL_RECORDS:?} has no test images to evaluate")));
    }
    let ecfg = cfg.eval_config()?;
    let protocol: Protocol = cfg.train.protocol.parse().map_err(|e: vseg_core::Error| CliError::Config(e.to_string()))?;
    let records = load_dataset(&data.unwrap_or_else(|| cfg.paths.data_dir.clone()))?;
    let plan = make_split(&records, protocol, cfg.train.seed.unwrap_or(0))?;
    let weights_dir = weights_dir.unwrap_or_else(|| cfg.paths.output_dir.clone());
    let models: Vec<Model> = (0..plan.folds.len())
        .map(|k| load_model(cfg, width, &weights_dir.join(format!("fold{k}.vswa"))))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&dyn Segmenter> = models.iter().map(|m| m as &dyn Segmenter).collect();
    let report = evaluate(&refs, &plan, &records, &ecfg)?;
    let out = out.unwrap_or_else(|| cfg.paths.output_dir.join("eval.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    report.write_csv(&out)?;
    print!("{}", report.to_table());
    log::info!("evaluate: {} images over {} fold(s) -> {}", report.rows.len(), report.folds(), out.display());
    Ok(())
}
