//! Region classification.
//!
//! Each region is described by a 16-value color descriptor and labeled by a
//! one-vs-rest SVM. The descriptor layout is:
//!
//! | index  | content                                                      |
//! |--------|--------------------------------------------------------------|
//! | 0..9   | three dominant HSV colors (K-means, k = 3), most populous first |
//! | 9..15  | mean then standard deviation of H, S, V                      |
//! | 15     | mask area over bounding-box area                             |
//!
//! Hue is stored as `degrees / 360` so every value lies in `[0, 1]`.

mod metrics;
mod svm;

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{evaluate, ClassMetrics, Metrics};
pub use svm::{svm_predict, svm_train, BinaryMachine, Kernel, SvmModel, SvmParams};

use crate::cluster::{kmeans_fit, KMeansParams};
use crate::error::{Error, Result};
use crate::imagecore::{load_image, normalize, rgb_to_hsv, ColorSpace, ImageBuffer};
use crate::nutrition::{Category, FoodItem, Taxonomy};
use crate::segment::{subtract_background, Mask};

pub const FEATURE_DIM: usize = 16;

/// Dominant colors in the descriptor.
pub const PALETTE_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// FNV-1a over the masked content, used to seed the descriptor K-means.
fn content_hash(pixels: &[[f64; 3]], mask: &Mask) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(&(mask.width() as u64).to_le_bytes());
    feed(&(mask.pixel_count() as u64).to_le_bytes());
    for p in pixels {
        for v in p {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    h
}

pub fn extract_features(img: &ImageBuffer, mask: &Mask) -> Result<FeatureVector> {
    if img.color_space() != ColorSpace::Rgb {
        return Err(Error::InvalidArgument(format!("expected an rgb image, got {}", img.color_space())));
    }
    if (img.width(), img.height()) != (mask.width(), mask.height()) {
        return Err(Error::dims(
            format!("{}x{}", img.width(), img.height()),
            format!("{}x{}", mask.width(), mask.height()),
        ));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let hsv: Vec<[f64; 3]> = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| {
            let p = img.pixel_at(i);
            let [h, s, v] = rgb_to_hsv([p[0], p[1], p[2]]);
            [h / 360.0, s, v]
        })
        .collect();

    let k = PALETTE_SIZE.min(hsv.len());
    let params = KMeansParams { k, seed: content_hash(&hsv, mask), ..KMeansParams::default() };
    let model = kmeans_fit(&hsv, &params)?;
    let mut population = vec![0usize; k];
    for &a in &model.assignments {
        population[a] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| population[b].cmp(&population[a]).then(a.cmp(&b)));
    while order.len() < PALETTE_SIZE {
        order.push(order[0]);
    }

    let mut out = Vec::with_capacity(FEATURE_DIM);
    for &j in &order {
        out.extend_from_slice(&model.centroids[j]);
    }
    let n = hsv.len() as f64;
    let mean: [f64; 3] = [0, 1, 2].map(|c| hsv.iter().map(|p| p[c]).sum::<f64>() / n);
    let std: [f64; 3] = [0, 1, 2].map(|c| (hsv.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt());
    out.extend_from_slice(&mean);
    out.extend_from_slice(&std);
    let bbox = mask.bounding_box().expect("mask is non-empty");
    out.push(mask.pixel_count() as f64 / bbox.area() as f64);
    debug_assert_eq!(out.len(), FEATURE_DIM);
    Ok(FeatureVector(out))
}

/// Feature vectors with labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<(FeatureVector, String)>,
}

impl LabeledDataset {
    pub fn labels(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|(_, l)| l.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Loads `root/<label>/*.png`, one object per image on a plain backdrop.
    ///
    /// Every image is normalized and its object mask found by background
    /// subtraction before feature extraction.
    pub fn load_dir(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::Dataset(format!("{} is not a directory", root.display())));
        }
        let mut files = Vec::new();
        let mut class_dirs: Vec<_> = std::fs::read_dir(root)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|e| e.path().is_dir())
            .collect();
        class_dirs.sort_by_key(|e| e.file_name());
        for dir in class_dirs {
            let label = dir.file_name().to_string_lossy().into_owned();
            let mut images: Vec<_> = std::fs::read_dir(dir.path())?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("png")))
                .collect();
            if images.is_empty() {
                return Err(Error::Dataset(format!("class {label:?} has no png images")));
            }
            images.sort();
            files.extend(images.into_iter().map(|p| (p, label.clone())));
        }
        if files.is_empty() {
            return Err(Error::Dataset(format!("{} contains no class directories", root.display())));
        }
        let samples = files
            .par_iter()
            .map(|(path, label)| {
                let wrap = |e: Error| Error::Dataset(format!("{}: {e}", path.display()));
                let img = normalize(&load_image(path).map_err(wrap)?);
                let mask = subtract_background(&img).map_err(wrap)?;
                Ok((extract_features(&img, &mask).map_err(wrap)?, label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples })
    }
}

/// Trains on a dataset (see [`svm_train`]).
pub fn train(data: &LabeledDataset, params: &SvmParams) -> Result<SvmModel> {
    svm_train(&data.samples, params)
}

/// Classifies every region and turns food regions into [`FoodItem`]s.
///
/// Regions classified as plate surface are dropped; the remaining items'
/// fractions are their share of the food pixels.
pub fn classify_regions(
    img: &ImageBuffer,
    masks: &[(u32, Mask)],
    model: &SvmModel,
    taxonomy: &Taxonomy,
) -> Result<Vec<FoodItem>> {
    let predicted = masks
        .par_iter()
        .map(|(id, mask)| {
            let features = extract_features(img, mask)?;
            let (label, _) = svm_predict(model, &features.0)?;
            Ok((*id, label, mask.pixel_count()))
        })
        .collect::<Result<Vec<_>>>()?;

    let food: Vec<(u32, String, Category, usize)> = predicted
        .into_iter()
        .map(|(id, label, px)| {
            let category = taxonomy.category(&label);
            (id, label, category, px)
        })
        .filter(|(_, _, category, _)| *category != Category::PlateSurface)
        .collect();
    let total: usize = food.iter().map(|f| f.3).sum();
    Ok(food
        .into_iter()
        .map(|(region_id, label, category, pixel_count)| FoodItem {
            region_id,
            label,
            category,
            pixel_count,
            fraction: pixel_count as f64 / total as f64,
        })
        .collect())
}
