//! Held-out evaluation and single-image segmentation.

use std::collections::HashMap;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rayon::prelude::*;

use super::metrics::{confusion, metrics, ConfusionCounts, MetricsReport};
use super::split::SplitPlan;
use super::DatasetRecord;
use crate::augment::{finalize, Sample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::preprocess::{preprocess_pipeline, PreprocessConfig};
use crate::tensor::Tensor;

/// Anything that maps `[n, 3, H, W]` images to `[n, 1, H, W]` probabilities.
pub trait Segmenter: Sync {
    fn segment(&self, x: &Tensor) -> Result<Tensor>;
}

impl Segmenter for Model {
    fn segment(&self, x: &Tensor) -> Result<Tensor> {
        self.predict(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// network resolution (height, width)
    pub input_size: (u32, u32),
    pub threshold: f64,
    pub preprocess: PreprocessConfig,
    /// sum confusion counts over a fold's images before computing metrics
    pub pooled: bool,
    /// upsample predictions to the mask's own resolution before comparing
    pub native_resolution: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            input_size: (224, 224),
            threshold: 0.5,
            preprocess: PreprocessConfig::default(),
            pooled: false,
            native_resolution: false,
        }
    }
}

/// Bilinear resampling (half-pixel centres) of a `[1, h, w]` map.
pub fn resize_probability(prob: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let [1, h, w] = prob.shape()[..] else {
        return Err(Error::invalid("resize_probability", format!("expected [1, h, w], got {:?}", prob.shape())));
    };
    let (oh, ow) = size;
    if (oh, ow) == (h, w) {
        return Ok(prob.clone());
    }
    let tap = |d: usize, src: usize, dst: usize| {
        let s = ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(src - 1), s - lo as f64)
    };
    let p = prob.data();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = tap(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = tap(x, w, ow);
            let at = |yy: usize, xx: usize| p[yy * w + xx] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Tensor::new([1, oh, ow], out)
}

/// 0/1 mask of the pixels at or above `threshold` in a `[1, h, w]` map.
pub fn probability_to_mask(prob: &Tensor, threshold: f64) -> Result<GrayImage> {
    let [1, h, w] = prob.shape()[..] else {
        return Err(Error::invalid("probability_to_mask", format!("expected [1, h, w], got {:?}", prob.shape())));
    };
    let p = prob.data();
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(p[y as usize * w + x as usize] as f64 >= threshold) as u8])
    }))
}

/// Vessel pixels blended halfway towards pure red.
pub fn overlay(img: &RgbImage, mask: &GrayImage) -> RgbImage {
    let mut out = img.clone();
    for (p, m) in out.pixels_mut().zip(mask.pixels()) {
        if m[0] > 0 {
            *p = Rgb([p[0] / 2 + 128, p[1] / 2, p[2] / 2]);
        }
    }
    out
}

fn network_input(image: &RgbImage, cfg: &EvalConfig) -> Result<Tensor> {
    let conditioned = preprocess_pipeline(image, &cfg.preprocess)?;
    let (w, h) = conditioned.dimensions();
    let dummy = Sample {
        image: conditioned,
        mask: GrayImage::new(w, h),
    };
    let (x, _) = finalize(&dummy, cfg.input_size);
    let shape = [1, 3, cfg.input_size.0 as usize, cfg.input_size.1 as usize];
    x.reshape(shape)
}

/// Segments one fundus image. Returns the probability map at network
/// resolution and the thresholded 0/1 mask scaled back (nearest neighbour)
/// to the image's own size.
pub fn segment_image(model: &dyn Segmenter, image: &RgbImage, cfg: &EvalConfig) -> Result<(Tensor, GrayImage)> {
    let x = network_input(image, cfg)?;
    let (h, w) = (cfg.input_size.0 as usize, cfg.input_size.1 as usize);
    let prob = model.segment(&x)?.reshape([1, h, w])?;
    let mask = probability_to_mask(&prob, cfg.threshold)?;
    let (iw, ih) = image.dimensions();
    Ok((prob, crate::preprocess::resize_nearest_gray(&mask, (ih, iw))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub fold: usize,
    pub id: String,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageResult>,
    /// one entry per fold: mean of its images, or metrics of pooled counts
    pub per_fold: Vec<MetricsReport>,
    /// mean over folds
    pub aggregate: MetricsReport,
    pub pooled: bool,
}

impl EvalReport {
    pub fn folds(&self) -> usize {
        self.per_fold.len()
    }

    /// Per-image rows followed by one aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,id,tp,fp,tn,fn,accuracy,sensitivity,specificity,dice\n");
        let m = |r: &MetricsReport| {
            format!("{:.6},{:.6},{:.6},{:.6}", r.accuracy, r.sensitivity, r.specificity, r.dice)
        };
        for r in &self.rows {
            let c = &r.counts;
            out.push_str(&format!("{},{},{},{},{},{},{}\n", r.fold, r.id, c.tp, c.fp, c.tn, c.fn_, m(&r.metrics)));
        }
        let label = if self.pooled { "pooled" } else { "mean" };
        out.push_str(&format!("all,{label},,,,,{}\n", m(&self.aggregate)));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Aligned plain-text summary, percentages with two decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6} {:<24} {:>8} {:>8} {:>8} {:>8}\n", "fold", "image", "Acc", "Sen", "Spec", "DC");
        let line = |fold: &str, id: &str, r: &MetricsReport| {
            format!(
                "{fold:<6} {id:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
                100.0 * r.accuracy,
                100.0 * r.sensitivity,
                100.0 * r.specificity,
                100.0 * r.dice
            )
        };
        for r in &self.rows {
            out.push_str(&line(&r.fold.to_string(), &r.id, &r.metrics));
        }
        out.push_str(&line("all", if self.pooled { "pooled" } else { "mean" }, &self.aggregate));
        out
    }
}

/// Scores fold `k`'s model on fold `k`'s test images.
///
/// Each image is conditioned (no augmentation), resized to the network
/// input and segmented; the mask is resized (nearest) to the same size, or
/// with `native_resolution` the prediction is instead upsampled to the mask.
/// Per-image metrics are averaged within a fold, then across folds.
pub fn evaluate(
    models: &[&dyn Segmenter],
    plan: &SplitPlan,
    records: &[DatasetRecord],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if models.len() < plan.folds.len() {
        return Err(Error::Data(format!(
            "plan has {} folds but only {} model(s) were given",
            plan.folds.len(),
            models.len()
        )));
    }
    let by_id: HashMap<&str, &DatasetRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let jobs: Vec<(usize, &DatasetRecord)> = plan
        .folds
        .iter()
        .enumerate()
        .flat_map(|(k, f)| f.test.iter().map(move |id| (k, id)))
        .map(|(k, id)| {
            by_id
                .get(id.as_str())
                .map(|r| (k, *r))
                .ok_or_else(|| Error::Data(format!("test id {id} has no record")))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<ImageResult> = jobs
        .par_iter()
        .map(|&(k, record)| {
            let sample = record.load_sample()?;
            let x = network_input(&sample.image, cfg)?;
            let (h, w) = (cfg.input_size.0 as usize, cfg.input_size.1 as usize);
            let prob = models[k].segment(&x)?.reshape([1, h, w])?;
            let (pred, truth) = if cfg.native_resolution {
                let (mw, mh) = sample.mask.dimensions();
                let truth = Tensor::new(
                    [1, mh as usize, mw as usize],
                    sample.mask.pixels().map(|p| p[0] as f32).collect(),
                )?;
                (resize_probability(&prob, (mh as usize, mw as usize))?, truth)
            } else {
                (prob, finalize(&sample, cfg.input_size).1)
            };
            let counts = confusion(&pred, &truth, cfg.threshold)?;
            Ok(ImageResult {
                fold: k,
                id: record.id.clone(),
                counts,
                metrics: metrics(&counts),
            })
        })
        .collect::<Result<_>>()?;

    let per_fold: Vec<MetricsReport> = (0..plan.folds.len())
        .map(|k| {
            let fold_rows = rows.iter().filter(|r| r.fold == k);
            if cfg.pooled {
                metrics(&fold_rows.fold(ConfusionCounts::default(), |acc, r| acc + r.counts))
            } else {
                MetricsReport::mean(&fold_rows.map(|r| r.metrics).collect::<Vec<_>>())
            }
        })
        .collect();
    Ok(EvalReport {
        aggregate: MetricsReport::mean(&per_fold),
        rows,
        per_fold,
        pooled: cfg.pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_resize_keeps_constants() {
        let p = Tensor::full([1, 4, 6], 0.3f32);
        let r = resize_probability(&p, (9, 5)).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn overlay_marks_vessels_red() {
        let img = RgbImage::from_pixel(2, 1, Rgb([100, 100, 100]));
        let mask = GrayImage::from_fn(2, 1, |x, _| Luma([x as u8]));
        let o = overlay(&img, &mask);
        assert_eq!(o.get_pixel(0, 0), &Rgb([100, 100, 100]));
        assert_eq!(o.get_pixel(1, 0), &Rgb([178, 50, 50]));
    }
}
