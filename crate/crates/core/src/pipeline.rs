//! The full assessment, from photo to report.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::classify::{classify_regions, extract_features, svm_train, Kernel, SvmModel, SvmParams};
use crate::cluster::{kmeans_fit_image, quantize, ClusterModel, KMeansParams, Palette};
use crate::error::Result;
use crate::imagecore::{convert_color, normalize, ColorSpace, ImageBuffer};
use crate::nutrition::{Category, PlateAssessment, Taxonomy, PLATE_LABEL};
use crate::segment::{
    extract_masks, overlay, region_grow, region_merge, subtract_background, Connectivity, Mask, RegionMap,
};
use crate::synth::{label_color, render_patch, PATCH_VARIANTS};

/// Regions smaller than this share of the plate are folded into a neighbour.
pub const MIN_REGION_FRACTION: f64 = 0.005;

/// Assumed physical plate radius, used only to report a scale.
pub const PLATE_RADIUS_CM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub color_space: ColorSpace,
    pub k: usize,
    pub connectivity: Connectivity,
    pub merge_threshold: f64,
    /// Absolute minimum region size; defaults to [`MIN_REGION_FRACTION`] of the plate.
    pub min_region_px: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            color_space: ColorSpace::Hsv,
            k: 8,
            connectivity: Connectivity::Four,
            merge_threshold: 12.0,
            min_region_px: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams { k: self.k, seed: self.seed, ..KMeansParams::default() }
    }

    fn min_region(&self, plate_pixels: usize) -> usize {
        self.min_region_px.unwrap_or_else(|| (plate_pixels as f64 * MIN_REGION_FRACTION).round() as usize)
    }
}

/// Intermediate products of the segmentation stages.
#[derive(Debug, Clone)]
pub struct Segmentation {
    /// 256x256 RGB.
    pub normalized: ImageBuffer,
    pub model: ClusterModel,
    pub quantized: ImageBuffer,
    pub palette: Palette,
    pub plate: Mask,
    pub grown: RegionMap,
    pub regions: RegionMap,
    pub masks: Vec<(u32, Mask)>,
}

pub fn segment_plate(img: &ImageBuffer, config: &PipelineConfig) -> Result<Segmentation> {
    let normalized = normalize(&convert_color(img, ColorSpace::Rgb)?);
    let working = convert_color(&normalized, config.color_space)?;
    let model = kmeans_fit_image(&working, &config.kmeans_params())?;
    let (quantized, palette) = quantize(&working, &model)?;
    let plate = subtract_background(&normalized)?;
    let grown = region_grow(&quantized, &plate, config.connectivity)?;
    let regions = region_merge(&grown, config.merge_threshold, config.min_region(plate.pixel_count()));
    let masks = extract_masks(&regions);
    Ok(Segmentation { normalized, model, quantized, palette, plate, grown, regions, masks })
}

#[derive(Debug, Clone)]
pub struct Assessment {
    pub segmentation: Segmentation,
    pub plate: PlateAssessment,
}

pub fn assess_image(
    img: &ImageBuffer,
    model: &SvmModel,
    taxonomy: &Taxonomy,
    config: &PipelineConfig,
) -> Result<Assessment> {
    let segmentation = segment_plate(img, config)?;
    let items = classify_regions(&segmentation.normalized, &segmentation.masks, model, taxonomy)?;
    let plate = PlateAssessment::new(items, taxonomy)?;
    Ok(Assessment { segmentation, plate })
}

/// Overlay color for each category.
pub fn category_color(category: Category) -> [u8; 3] {
    match category {
        Category::Fruit => [230, 60, 60],
        Category::Vegetable => [40, 170, 60],
        Category::HealthyProtein => [60, 90, 220],
        Category::WholeGrain => [220, 180, 40],
        Category::Junk => [150, 60, 170],
        Category::PlateSurface => [255, 255, 255],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub overlay: PathBuf,
    pub labels: PathBuf,
    pub palette: PathBuf,
    pub masks: Vec<PathBuf>,
}

/// Writes the overlay, label image, palette strip and one mask per food item.
pub fn write_artifacts(assessment: &Assessment, dir: impl AsRef<Path>) -> Result<ArtifactPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let seg = &assessment.segmentation;
    let food_masks: Vec<(Mask, [u8; 3])> = assessment
        .plate
        .items
        .iter()
        .filter_map(|item| {
            seg.masks
                .iter()
                .find(|(id, _)| *id == item.region_id)
                .map(|(_, m)| (m.clone(), category_color(item.category)))
        })
        .collect();

    let paths = ArtifactPaths {
        overlay: dir.join("overlay.png"),
        labels: dir.join("labels.png"),
        palette: dir.join("palette.png"),
        masks: assessment.plate.items.iter().map(|item| dir.join(format!("mask_{:03}.png", item.region_id))).collect(),
    };
    overlay(&seg.normalized, &food_masks)?.save_png(&paths.overlay)?;
    seg.regions.save_label_png(&paths.labels)?;
    seg.palette.save_swatch_png(&paths.palette, 32)?;
    for ((mask, _), path) in food_masks.iter().zip(&paths.masks) {
        mask.save_png(path)?;
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub width: usize,
    pub height: usize,
    pub color_space: ColorSpace,
    pub k: usize,
    pub connectivity: Connectivity,
    pub merge_threshold: f64,
    pub min_region_px: usize,
    pub seed: u64,
    pub regions_grown: usize,
    pub regions: usize,
    pub plate_pixels: usize,
    pub plate_radius_px: f64,
    pub pixels_per_cm: f64,
}

/// Serializable result of one assessment. Contains nothing that varies
/// between runs with the same input and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub input: String,
    #[serde(flatten)]
    pub assessment: PlateAssessment,
    pub balance_rounded: i64,
    pub healthy_percent: i64,
    pub metadata: ReportMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<ArtifactPaths>,
}

impl AssessmentReport {
    pub fn new(
        input: impl Into<String>,
        original: &ImageBuffer,
        assessment: &Assessment,
        config: &PipelineConfig,
        artifacts: Option<ArtifactPaths>,
    ) -> Self {
        let seg = &assessment.segmentation;
        let plate_pixels = seg.plate.pixel_count();
        let plate_radius_px = (plate_pixels as f64 / std::f64::consts::PI).sqrt();
        Self {
            input: input.into(),
            assessment: assessment.plate.clone(),
            balance_rounded: assessment.plate.balance_rounded(),
            healthy_percent: assessment.plate.healthy_percent(),
            metadata: ReportMetadata {
                width: original.width(),
                height: original.height(),
                color_space: config.color_space,
                k: seg.model.k,
                connectivity: config.connectivity,
                merge_threshold: config.merge_threshold,
                min_region_px: config.min_region(plate_pixels),
                seed: config.seed,
                regions_grown: seg.grown.region_count(),
                regions: seg.regions.region_count(),
                plate_pixels,
                plate_radius_px,
                pixels_per_cm: plate_radius_px / PLATE_RADIUS_CM,
            },
            artifacts,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Kernel settings for the built-in model.
pub fn demo_svm_params() -> SvmParams {
    SvmParams { kernel: Kernel::Rbf { gamma: 40.0 }, c: 100.0, ..SvmParams::default() }
}

fn ring_patch(color: [u8; 3], variant: usize) -> (ImageBuffer, Mask) {
    let (img, disc) = render_patch(color, 0);
    let hole = 20.0 + 10.0 * variant as f64;
    let mask = Mask::from_fn(disc.width(), disc.height(), |x, y| {
        let (dx, dy) = (x as f64 - 128.0, y as f64 - 128.0);
        disc.get(x, y) && dx * dx + dy * dy > hole * hole
    });
    (img, mask)
}

/// Model trained on synthetic patches of every default label and the bare
/// plate. Built once per process.
pub fn demo_model() -> &'static SvmModel {
    static MODEL: OnceLock<SvmModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let taxonomy = Taxonomy::default();
        let mut labels: Vec<&str> = taxonomy.labels().collect();
        labels.push(PLATE_LABEL);
        labels.sort_unstable();
        labels.dedup();
        let mut samples = Vec::new();
        for label in labels {
            let color = label_color(label).expect("every default label has a color");
            let mut patches: Vec<_> = (0..PATCH_VARIANTS).map(|v| render_patch(color, v)).collect();
            if label == PLATE_LABEL {
                patches.extend((0..3).map(|v| ring_patch(color, v)));
            }
            for (img, mask) in patches {
                let features = extract_features(&img, &mask).expect("patch masks are non-empty");
                samples.push((features.0, label.to_string()));
            }
        }
        svm_train(&samples, &demo_svm_params()).expect("demo training set is valid")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render, ItemSpec, PlateSpec, Shape};

    #[test]
    fn demo_model_knows_every_patch() {
        let model = demo_model();
        for label in Taxonomy::default().labels().chain([PLATE_LABEL]) {
            let (img, mask) = render_patch(label_color(label).unwrap(), 0);
            let features = extract_features(&img, &mask).unwrap();
            assert_eq!(crate::classify::svm_predict(model, &features.0).unwrap().0, label);
        }
    }

    #[test]
    fn single_item_plate() {
        let spec = PlateSpec::centered(vec![ItemSpec {
            label: "broccoli".into(),
            shape: Shape::Disc { cx: 128.0, cy: 128.0, r: 40.0 },
            color: None,
        }]);
        let (img, truth) = render(&spec).unwrap();
        let out = assess_image(&img, demo_model(), &Taxonomy::default(), &PipelineConfig::default()).unwrap();
        assert_eq!(out.plate.items.len(), 1);
        assert_eq!(out.plate.items[0].label, "broccoli");
        assert_eq!(out.plate.items[0].pixel_count, truth.items[0].pixels);
        assert_eq!(out.plate.shares.vegetable, 100.0);
        assert_eq!(out.segmentation.plate.pixel_count(), truth.plate_pixels);

        let report = AssessmentReport::new("x.png", &img, &out, &PipelineConfig::default(), None);
        assert!((report.metadata.plate_radius_px - 110.0).abs() < 1.0);
        let json = report.to_json();
        assert!(json.contains("\"B\"") && json.contains("\"band\""));
    }

    #[test]
    fn empty_plate_has_no_food() {
        let (img, _) = render(&PlateSpec::centered(vec![])).unwrap();
        let err = assess_image(&img, demo_model(), &Taxonomy::default(), &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, crate::Error::NoFoodItems));
    }
}
