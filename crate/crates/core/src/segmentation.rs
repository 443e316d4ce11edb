//! Adaptive threshold map and binarization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    box_mean, downsample_mean, upsample_bilinear, BinaryImage, FloatMap, GrayImage,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// First downsample factor.
    pub s1: usize,
    /// Second downsample factor, applied to the averaged map.
    pub s2: usize,
    /// Averaging window, in `s1`-downsampled pixels. Odd.
    pub w: usize,
    /// Dark clamp: downsampled samples below this are raised to it.
    pub alpha: f64,
    /// Minimum brightness for a white pixel.
    pub beta: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            s1: 4,
            s2: 8,
            w: 5,
            alpha: 45.0,
            beta: 50.0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if self.s1 == 0 || self.s2 == 0 {
            return Err(Error::InvalidArgument("s1 and s2 must be >= 1".into()));
        }
        if self.w == 0 || self.w.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "window w must be odd, got {}",
                self.w
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {v} outside [0, 255]"
                )));
            }
        }
        Ok(())
    }
}

/// Threshold map at full resolution:
/// downsample by `s1`, clamp to `alpha`, box-average over `w`,
/// downsample by `s2`, then bilinearly upsample by `s1 * s2`.
pub fn estimate_threshold_map(img: &GrayImage, p: &SegmentationParams) -> Result<FloatMap> {
    p.validate()?;
    let min = p.s1 * p.s2;
    if img.width() < min || img.height() < min {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let mut coarse = downsample_mean(img, p.s1)?;
    for v in coarse.data_mut() {
        if *v < p.alpha {
            *v = p.alpha;
        }
    }
    let averaged = box_mean(&coarse, p.w)?;
    let coarser = downsample_mean(&averaged, p.s2)?;
    upsample_bilinear(&coarser, p.s1 * p.s2, img.width(), img.height())
}

/// White iff `intensity > threshold` and `intensity >= beta`.
pub fn binarize(img: &GrayImage, map: &FloatMap, beta: f64) -> Result<BinaryImage> {
    if img.width() != map.width() || img.height() != map.height() {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} and threshold map {}x{} differ",
            img.width(),
            img.height(),
            map.width(),
            map.height()
        )));
    }
    let data = img
        .data()
        .iter()
        .zip(map.data())
        .map(|(&v, &t)| {
            let v = f64::from(v);
            v > t && v >= beta
        })
        .collect();
    BinaryImage::from_vec(img.width(), img.height(), data)
}

/// Threshold map followed by binarization.
pub fn segment(img: &GrayImage, p: &SegmentationParams) -> Result<(FloatMap, BinaryImage)> {
    let map = estimate_threshold_map(img, p)?;
    let bin = binarize(img, &map, p.beta)?;
    Ok((map, bin))
}
