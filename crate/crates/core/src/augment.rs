//! Deterministic 60-fold augmentation of image/mask pairs: five crops
//! (original and four halves), four rotations, three flip states.

use image::imageops;
use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::preprocess::{normalize01, resize_bilinear, resize_nearest_gray};
use crate::tensor::Tensor;

pub const CROPS: usize = 5;
pub const ROTATIONS: [u32; 4] = [0, 90, 180, 270];
pub const FLIPS: [Flip; 3] = [Flip::None, Flip::Horizontal, Flip::Vertical];
/// Variants produced per input pair.
pub const VARIANTS: usize = CROPS * ROTATIONS.len() * FLIPS.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    None,
    /// mirror left/right
    Horizontal,
    /// mirror top/bottom
    Vertical,
}

impl Flip {
    pub fn tag(self) -> char {
        match self {
            Flip::None => 'n',
            Flip::Horizontal => 'h',
            Flip::Vertical => 'v',
        }
    }
}

/// A fundus image with its vessel mask (values 0 or 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub mask: GrayImage,
}

impl Sample {
    pub fn new(image: RgbImage, mask: GrayImage) -> Result<Self> {
        if image.dimensions() != mask.dimensions() {
            return Err(Error::Data(format!(
                "image is {:?} but mask is {:?}",
                image.dimensions(),
                mask.dimensions()
            )));
        }
        if mask.pixels().any(|p| p[0] > 1) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        Ok(Self { image, mask })
    }

    /// (width, height)
    pub fn dimensions(&self) -> (u32, u32) {
        self.image.dimensions()
    }

    pub fn vessel_pixels(&self) -> usize {
        self.mask.pixels().filter(|p| p[0] == 1).count()
    }

    fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Self {
        Self {
            image: imageops::crop_imm(&self.image, x, y, w, h).to_image(),
            mask: imageops::crop_imm(&self.mask, x, y, w, h).to_image(),
        }
    }

    fn rotated(&self, degrees: u32) -> Self {
        match degrees {
            90 => Self {
                image: imageops::rotate90(&self.image),
                mask: imageops::rotate90(&self.mask),
            },
            180 => Self {
                image: imageops::rotate180(&self.image),
                mask: imageops::rotate180(&self.mask),
            },
            270 => Self {
                image: imageops::rotate270(&self.image),
                mask: imageops::rotate270(&self.mask),
            },
            _ => self.clone(),
        }
    }

    fn flipped(&self, flip: Flip) -> Self {
        match flip {
            Flip::None => self.clone(),
            Flip::Horizontal => Self {
                image: imageops::flip_horizontal(&self.image),
                mask: imageops::flip_horizontal(&self.mask),
            },
            Flip::Vertical => Self {
                image: imageops::flip_vertical(&self.image),
                mask: imageops::flip_vertical(&self.mask),
            },
        }
    }
}

/// The crop with index `i`: 0 original, 1 left, 2 right, 3 top, 4 bottom.
/// Odd extents give the floor to the left/top half.
fn crop_at(s: &Sample, i: usize) -> Sample {
    let (w, h) = s.dimensions();
    let (hw, hh) = (w / 2, h / 2);
    match i {
        1 => s.crop(0, 0, hw, h),
        2 => s.crop(hw, 0, w - hw, h),
        3 => s.crop(0, 0, w, hh),
        4 => s.crop(0, hh, w, h - hh),
        _ => s.clone(),
    }
}

fn check_croppable(s: &Sample) -> Result<()> {
    let (w, h) = s.dimensions();
    if w < 2 || h < 2 {
        return Err(Error::Data(format!("cannot halve a {w}x{h} image")));
    }
    Ok(())
}

/// `[original, left, right, top, bottom]`.
pub fn crop_set(s: &Sample) -> Result<Vec<Sample>> {
    check_croppable(s)?;
    Ok((0..CROPS).map(|i| crop_at(s, i)).collect())
}

/// `[identity, r90, r180, r270]`, clockwise.
pub fn rotate_set(s: &Sample) -> Vec<Sample> {
    ROTATIONS.iter().map(|&d| s.rotated(d)).collect()
}

/// `[identity, horizontal flip, vertical flip]`.
pub fn flip_set(s: &Sample) -> Vec<Sample> {
    FLIPS.iter().map(|&f| s.flipped(f)).collect()
}

/// Crop, rotation and flip of variant `index`, in crop-major order.
pub fn variant_parts(index: usize) -> (usize, u32, Flip) {
    let crop = index / (ROTATIONS.len() * FLIPS.len());
    let rot = (index / FLIPS.len()) % ROTATIONS.len();
    (crop, ROTATIONS[rot], FLIPS[index % FLIPS.len()])
}

/// File-name suffix for variant `index`, e.g. `_c3_r270_fh`.
pub fn variant_suffix(index: usize) -> String {
    let (c, r, f) = variant_parts(index);
    format!("_c{c}_r{r}_f{}", f.tag())
}

/// A single variant without materializing the other 59.
pub fn augment_variant(s: &Sample, index: usize) -> Result<Sample> {
    if index >= VARIANTS {
        return Err(Error::invalid("augment_variant", format!("index {index} out of 0..{VARIANTS}")));
    }
    check_croppable(s)?;
    let (c, r, f) = variant_parts(index);
    Ok(crop_at(s, c).rotated(r).flipped(f))
}

/// All 60 variants: crops, then rotations of each crop, then flips of each.
pub fn augment_sample(s: &Sample) -> Result<Vec<Sample>> {
    let crops = crop_set(s)?;
    Ok(crops
        .iter()
        .flat_map(rotate_set)
        .flat_map(|r| flip_set(&r))
        .collect())
}

/// Resizes to `(height, width)`: bilinear for the image, nearest for the mask.
/// Returns tensors `[3, H, W]` in [0, 1] and `[1, H, W]` in {0, 1}.
pub fn finalize(s: &Sample, size: (u32, u32)) -> (Tensor, Tensor) {
    let image = normalize01(&resize_bilinear(&s.image, size));
    let mask = resize_nearest_gray(&s.mask, size);
    let (w, h) = mask.dimensions();
    let data = mask.pixels().map(|p| p[0] as f32).collect();
    let mask = Tensor::from_parts(vec![1, h as usize, w as usize], data);
    (image, mask)
}
