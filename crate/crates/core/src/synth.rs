//! Synthetic plates and training patches.
//!
//! Plates are white discs on a dark backdrop holding non-overlapping flat
//! colored discs and rectangles. Rasterization has no anti-aliasing, so the
//! returned ground truth pixel counts are exact and can serve as oracles
//! for the whole pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{ColorSpace, ImageBuffer, NORMALIZED_SIZE};
use crate::nutrition::PLATE_LABEL;
use crate::segment::Mask;

/// Most objects a plate may hold.
pub const MAX_ITEMS: usize = 8;

pub const BACKDROP: [u8; 3] = [24, 24, 28];
pub const PLATE_WHITE: [u8; 3] = [255, 255, 255];

/// Flat color used for each known label. Colors are at least 15 CIELAB
/// units apart and far from the plate and backdrop.
const LABEL_COLORS: &[(&str, [u8; 3])] = &[
    ("apple", [200, 30, 40]),
    ("orange", [245, 140, 20]),
    ("banana", [240, 220, 60]),
    ("grapes", [110, 40, 120]),
    ("broccoli", [40, 120, 40]),
    ("red cabbage", [150, 40, 110]),
    ("carrot", [230, 90, 40]),
    ("tomato", [255, 80, 90]),
    ("cucumber", [130, 200, 90]),
    ("fish", [170, 180, 210]),
    ("chicken", [235, 190, 150]),
    ("beans", [120, 60, 40]),
    ("lentils", [190, 120, 60]),
    ("nuts", [160, 110, 70]),
    ("egg", [255, 245, 180]),
    ("rice", [225, 215, 175]),
    ("buckwheat", [100, 70, 60]),
    ("wheat", [190, 150, 70]),
    ("oats", [165, 150, 120]),
    ("potato", [220, 190, 90]),
    ("fries", [250, 200, 60]),
    ("chips", [240, 170, 90]),
    (PLATE_LABEL, PLATE_WHITE),
];

pub fn label_color(label: &str) -> Option<[u8; 3]> {
    LABEL_COLORS.iter().find(|(l, _)| *l == label).map(|(_, c)| *c)
}

pub fn known_labels() -> impl Iterator<Item = &'static str> {
    LABEL_COLORS.iter().map(|(l, _)| *l)
}

fn default_size() -> usize {
    NORMALIZED_SIZE
}

fn default_backdrop() -> [u8; 3] {
    BACKDROP
}

fn default_plate_color() -> [u8; 3] {
    PLATE_WHITE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Pixels whose integer coordinates lie within `r` of the center.
    Disc { cx: f64, cy: f64, r: f64 },
    /// Axis-aligned, `w` by `h` pixels from the top-left corner `(x, y)`.
    Rect { x: usize, y: usize, w: usize, h: usize },
}

impl Shape {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::Rect { x: rx, y: ry, w, h } => x >= rx && y >= ry && x < rx + w && y < ry + h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateDisc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    #[serde(default = "default_plate_color")]
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub label: String,
    #[serde(flatten)]
    pub shape: Shape,
    /// Overrides the label's table color.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
}

/// Description of a synthetic plate photo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "default_backdrop")]
    pub backdrop: [u8; 3],
    pub plate: PlateDisc,
    pub items: Vec<ItemSpec>,
}

impl PlateSpec {
    /// Centered plate of radius 110 on a 256x256 canvas.
    pub fn centered(items: Vec<ItemSpec>) -> Self {
        Self {
            width: NORMALIZED_SIZE,
            height: NORMALIZED_SIZE,
            backdrop: BACKDROP,
            plate: PlateDisc { cx: 127.5, cy: 127.5, radius: 110.0, color: PLATE_WHITE },
            items,
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::PlateSpec(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthItem {
    pub label: String,
    pub pixels: usize,
    pub color: [u8; 3],
}

/// Exact pixel counts of a rendered plate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    /// Plate disc including the food on it.
    pub plate_pixels: usize,
    pub food_pixels: usize,
    pub items: Vec<TruthItem>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}

/// Rasterizes a plate.
///
/// Rejects more than [`MAX_ITEMS`] objects, objects that overlap, leave the
/// plate or cover no pixel, and labels without a known color.
pub fn render(spec: &PlateSpec) -> Result<(ImageBuffer, GroundTruth)> {
    if spec.items.len() > MAX_ITEMS {
        return Err(Error::PlateSpec(format!("{} objects, at most {MAX_ITEMS} allowed", spec.items.len())));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::EmptyImage);
    }
    let colors = spec
        .items
        .iter()
        .map(|item| {
            item.color
                .or_else(|| label_color(&item.label))
                .ok_or_else(|| Error::PlateSpec(format!("no color known for label {:?}", item.label)))
        })
        .collect::<Result<Vec<_>>>()?;

    let plate = Shape::Disc { cx: spec.plate.cx, cy: spec.plate.cy, r: spec.plate.radius };
    let mut owner: Vec<Option<usize>> = vec![None; spec.width * spec.height];
    let mut counts = vec![0usize; spec.items.len()];
    let mut plate_pixels = 0;
    for y in 0..spec.height {
        for x in 0..spec.width {
            let on_plate = plate.contains(x, y);
            plate_pixels += usize::from(on_plate);
            for (i, item) in spec.items.iter().enumerate() {
                if !item.shape.contains(x, y) {
                    continue;
                }
                if !on_plate {
                    return Err(Error::PlateSpec(format!("object {i} ({}) extends past the plate", item.label)));
                }
                let slot = &mut owner[y * spec.width + x];
                if let Some(other) = *slot {
                    return Err(Error::PlateSpec(format!("objects {other} and {i} overlap")));
                }
                *slot = Some(i);
                counts[i] += 1;
            }
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::PlateSpec(format!("object {i} covers no pixels")));
    }

    let mut bytes = Vec::with_capacity(spec.width * spec.height * 3);
    for (i, own) in owner.iter().enumerate() {
        let (x, y) = (i % spec.width, i / spec.width);
        let color = match own {
            Some(item) => colors[*item],
            None if plate.contains(x, y) => spec.plate.color,
            None => spec.backdrop,
        };
        bytes.extend_from_slice(&color);
    }
    let image = ImageBuffer::from_rgb8(spec.width, spec.height, &bytes)?;
    let truth = GroundTruth {
        width: spec.width,
        height: spec.height,
        plate_pixels,
        food_pixels: counts.iter().sum(),
        items: spec
            .items
            .iter()
            .zip(&counts)
            .zip(&colors)
            .map(|((item, &pixels), &color)| TruthItem { label: item.label.clone(), pixels, color })
            .collect(),
    };
    Ok((image, truth))
}

/// Renders a plate and writes `<out>` plus `<out stem>.truth.json`.
pub fn write_plate(spec: &PlateSpec, out: impl AsRef<Path>) -> Result<GroundTruth> {
    let out = out.as_ref();
    let (image, truth) = render(spec)?;
    image.save_png(out)?;
    std::fs::write(truth_path(out), truth.to_json())?;
    Ok(truth)
}

pub fn truth_path(image: &Path) -> std::path::PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image.with_file_name(format!("{stem}.truth.json"))
}

const PATCH_SHAPES: [Shape; 4] = [
    Shape::Disc { cx: 128.0, cy: 128.0, r: 60.0 },
    Shape::Rect { x: 68, y: 88, w: 120, h: 80 },
    Shape::Disc { cx: 100.0, cy: 150.0, r: 35.0 },
    Shape::Rect { x: 110, y: 60, w: 50, h: 140 },
];
const PATCH_SHADES: [f64; 3] = [1.0, 0.95, 1.05];

/// Number of distinct patch variants per label.
pub const PATCH_VARIANTS: usize = PATCH_SHAPES.len() * PATCH_SHADES.len();

fn shade(color: [u8; 3], factor: f64) -> [u8; 3] {
    color.map(|c| (f64::from(c) * factor).round().clamp(0.0, 255.0) as u8)
}

/// One training object on the backdrop, with its exact mask.
///
/// Variants cycle through four shapes and three brightness levels.
pub fn render_patch(color: [u8; 3], variant: usize) -> (ImageBuffer, Mask) {
    let shape = PATCH_SHAPES[variant % PATCH_SHAPES.len()];
    let color = shade(color, PATCH_SHADES[(variant / PATCH_SHAPES.len()) % PATCH_SHADES.len()]);
    let n = NORMALIZED_SIZE;
    let mask = Mask::from_fn(n, n, |x, y| shape.contains(x, y));
    let mut data = Vec::with_capacity(n * n * 3);
    for &inside in mask.bits() {
        data.extend(if inside { color } else { BACKDROP }.map(f64::from));
    }
    (ImageBuffer::new(n, n, ColorSpace::Rgb, data).expect("valid patch"), mask)
}

/// Writes `root/<label>/<variant>.png` for every label and variant.
pub fn write_patch_dataset(root: impl AsRef<Path>, labels: &[&str], variants: usize) -> Result<()> {
    for label in labels {
        let color =
            label_color(label).ok_or_else(|| Error::PlateSpec(format!("no color known for label {label:?}")))?;
        let dir = root.as_ref().join(label);
        std::fs::create_dir_all(&dir)?;
        for v in 0..variants {
            render_patch(color, v).0.save_png(dir.join(format!("{v:02}.png")))?;
        }
    }
    Ok(())
}
