//! Dataset ingestion, split protocols and segmentation metrics.

mod eval;
mod metrics;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, RgbImage};

use crate::augment::Sample;
use crate::error::{Error, Result};

pub use eval::{
    evaluate, overlay, probability_to_mask, resize_probability, segment_image, EvalConfig, EvalReport,
    ImageResult, Segmenter,
};
pub use metrics::{confusion, metrics, ConfusionCounts, MetricsReport};
pub use split::{make_split, Fold, Protocol, SplitPlan};

/// Extensions accepted as images or masks.
pub const IMAGE_EXTENSIONS: [&str; 8] = ["png", "jpg", "jpeg", "tif", "tiff", "gif", "bmp", "ppm"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Healthy,
    DiabeticRetinopathy,
    Glaucoma,
}

impl Category {
    /// Category from an id suffix: `_h`, `_dr` or `_g`.
    pub fn from_id(id: &str) -> Option<Self> {
        let suffix = id.rsplit_once('_')?.1.to_ascii_lowercase();
        match suffix.as_str() {
            "h" => Some(Category::Healthy),
            "dr" => Some(Category::DiabeticRetinopathy),
            "g" => Some(Category::Glaucoma),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Healthy => "healthy",
            Category::DiabeticRetinopathy => "diabetic-retinopathy",
            Category::Glaucoma => "glaucoma",
        })
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" | "h" => Ok(Category::Healthy),
            "diabetic-retinopathy" | "dr" => Ok(Category::DiabeticRetinopathy),
            "glaucoma" | "g" => Ok(Category::Glaucoma),
            _ => Err(Error::Data(format!("unknown category {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub category: Option<Category>,
}

impl DatasetRecord {
    /// Record with the category inferred from the id suffix.
    pub fn new(id: impl Into<String>, image_path: PathBuf, mask_path: PathBuf) -> Self {
        let id = id.into();
        let category = Category::from_id(&id);
        Self {
            id,
            image_path,
            mask_path,
            category,
        }
    }

    pub fn load_sample(&self) -> Result<Sample> {
        let image = load_rgb(&self.image_path)?;
        let mask = load_mask(&self.mask_path)?;
        Sample::new(image, mask).map_err(|e| Error::Data(format!("{}: {e}", self.id)))
    }
}

fn image_error(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_error(path, e))?.to_rgb8())
}

/// Loads a mask as 0/1: grey levels above 127 become 1.
pub fn load_mask(path: &Path) -> Result<GrayImage> {
    let mut mask = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    for p in mask.pixels_mut() {
        p[0] = (p[0] > 127) as u8;
    }
    Ok(mask)
}

/// Writes a 0/1 mask as a 0/255 PNG.
pub fn save_mask(mask: &GrayImage, path: &Path) -> Result<()> {
    let mut out = mask.clone();
    for p in out.pixels_mut() {
        p[0] = if p[0] > 0 { 255 } else { 0 };
    }
    out.save(path).map_err(|e| image_error(path, e))
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| image_error(path, e))
}

/// Image files directly inside `dir`, keyed (and so sorted) by file stem.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::Data(format!(
                "two files share the stem {stem:?}: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs `root/images/*` with `root/masks/*` by file stem, sorted by id.
/// Every image needs a mask and vice versa, with equal dimensions.
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetRecord>> {
    load_dataset_dirs(&root.join("images"), &root.join("masks"))
}

pub fn load_dataset_dirs(image_dir: &Path, mask_dir: &Path) -> Result<Vec<DatasetRecord>> {
    let images = list_images(image_dir)?;
    let masks = list_images(mask_dir)?;
    let orphans: Vec<String> = images
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .map(|k| format!("{k} (no mask)"))
        .chain(
            masks
                .keys()
                .filter(|k| !images.contains_key(*k))
                .map(|k| format!("{k} (no image)")),
        )
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Data(format!("unpaired files: {}", orphans.join(", "))));
    }
    let mut records = Vec::with_capacity(images.len());
    for (id, image_path) in images {
        let mask_path = masks[&id].clone();
        let di = image::image_dimensions(&image_path).map_err(|e| image_error(&image_path, e))?;
        let dm = image::image_dimensions(&mask_path).map_err(|e| image_error(&mask_path, e))?;
        if di != dm {
            return Err(Error::Data(format!("{id}: image is {di:?} but mask is {dm:?}")));
        }
        records.push(DatasetRecord::new(id, image_path, mask_path));
    }
    Ok(records)
}
