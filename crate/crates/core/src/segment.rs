//! Plate segmentation.
//!
//! The plate is separated from the backdrop first, then plate pixels are
//! grouped into maximal connected regions of identical quantized color.
//! Neighbouring regions with similar mean color, and regions too small to
//! be a food item, are merged over a region adjacency graph until nothing
//! changes. Every [`RegionMap`] produced here is a partition of the plate:
//! regions cover every plate pixel, never overlap and are each connected.
//!
//! Region mean colors are always kept in CIELAB so merge thresholds have
//! the same meaning whatever space the image was clustered in.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::squared_distance;
use crate::error::{Error, Result};
use crate::imagecore::{lab_to_rgb, pixel_to_lab, ColorSpace, ImageBuffer, NORMALIZED_SIZE};

/// Euclidean RGB distance from the border color above which a pixel is
/// foreground.
pub const BACKGROUND_THRESHOLD: f64 = 40.0;

/// Smallest plate, as a fraction of the image area.
pub const MIN_PLATE_FRACTION: f64 = 0.05;

/// Background label in a [`RegionMap`].
pub const BACKGROUND: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidArgument(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }
}

const OFFSETS_4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const OFFSETS_8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)];

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &OFFSETS_4,
            Connectivity::Eight => &OFFSETS_8,
        }
    }

    /// Offsets that point "forward" in raster order, so every adjacent pair
    /// is visited once.
    fn forward_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (0, 1)],
            Connectivity::Eight => &[(1, 0), (0, 1), (1, 1), (-1, 1)],
        }
    }
}

fn for_each_neighbor(index: usize, width: usize, height: usize, offsets: &[(isize, isize)], mut f: impl FnMut(usize)) {
    let (x, y) = ((index % width) as isize, (index / width) as isize);
    for &(dx, dy) in offsets {
        let (nx, ny) = (x + dx, y + dy);
        if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
            f(ny as usize * width + nx as usize);
        }
    }
}

/// Breadth-first connected-component labeling.
///
/// Pixels with `include` false get label 0. Two included neighbours share a
/// component iff `joins` holds for them. Labels start at 1 and follow the
/// raster order of each component's first pixel.
fn label_components(
    width: usize,
    height: usize,
    connectivity: Connectivity,
    include: impl Fn(usize) -> bool,
    joins: impl Fn(usize, usize) -> bool,
) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; width * height];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if labels[start] != 0 || !include(start) {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for_each_neighbor(i, width, height, connectivity.offsets(), |j| {
                if labels[j] == 0 && include(j) && joins(i, j) {
                    labels[j] = next;
                    queue.push_back(j);
                }
            });
        }
    }
    (labels, next)
}

/// Per-pixel membership flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    pixel_count: usize,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::dims(width * height, bits.len()));
        }
        let pixel_count = bits.iter().filter(|&&b| b).count();
        Ok(Self { width, height, bits, pixel_count })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self::new(width, height, bits).expect("length matches")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count == 0
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.check_same_size(other)?;
        Mask::new(self.width, self.height, self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect())
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.check_same_size(other)?;
        Mask::new(self.width, self.height, self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect())
    }

    fn check_same_size(&self, other: &Mask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Inclusive bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bbox: Option<BoundingBox> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = (i % self.width, i / self.width);
            bbox = Some(match bbox {
                None => BoundingBox { min_x: x, min_y: y, max_x: x, max_y: y },
                Some(b) => b.including(x, y),
            });
        }
        bbox
    }

    /// Writes a 1-bit grayscale PNG, set pixels white.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = (i % self.width, i / self.width);
            packed[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
        write_png(path.as_ref(), self.width, self.height, png::ColorType::Grayscale, png::BitDepth::One, None, &packed)
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    if let Some(palette) = palette {
        encoder.set_palette(palette);
    }
    let encode = |e: png::EncodingError| Error::Encode(e.to_string());
    let mut writer = encoder.write_header().map_err(encode)?;
    writer.write_image_data(data).map_err(encode)?;
    writer.finish().map_err(encode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl BoundingBox {
    fn including(self, x: usize, y: usize) -> Self {
        Self { min_x: self.min_x.min(x), min_y: self.min_y.min(y), max_x: self.max_x.max(x), max_y: self.max_y.max(y) }
    }

    fn union(self, other: Self) -> Self {
        self.including(other.min_x, other.min_y).including(other.max_x, other.max_y)
    }

    pub fn area(&self) -> usize {
        (self.max_x - self.min_x + 1) * (self.max_y - self.min_y + 1)
    }
}

/// Separates the plate from the backdrop.
///
/// The backdrop color is the per-channel median of the 1-pixel image
/// border. Pixels farther than [`BACKGROUND_THRESHOLD`] from it are
/// foreground; the largest 4-connected foreground component, with its
/// holes filled, is the plate.
pub fn subtract_background(img: &ImageBuffer) -> Result<Mask> {
    if img.color_space() != ColorSpace::Rgb {
        return Err(Error::InvalidArgument(format!("expected an rgb image, got {}", img.color_space())));
    }
    if (img.width(), img.height()) != (NORMALIZED_SIZE, NORMALIZED_SIZE) {
        return Err(Error::dims(
            format!("{NORMALIZED_SIZE}x{NORMALIZED_SIZE}"),
            format!("{}x{}", img.width(), img.height()),
        ));
    }
    let (w, h) = (img.width(), img.height());
    let border: Vec<usize> =
        (0..w * h).filter(|&i| i % w == 0 || i % w == w - 1 || i / w == 0 || i / w == h - 1).collect();
    let backdrop: Vec<f64> = (0..3)
        .map(|ch| {
            let mut values: Vec<f64> = border.iter().map(|&i| img.pixel_at(i)[ch]).collect();
            values.sort_by(f64::total_cmp);
            let mid = values.len() / 2;
            if values.len().is_multiple_of(2) {
                (values[mid - 1] + values[mid]) / 2.0
            } else {
                values[mid]
            }
        })
        .collect();

    let threshold2 = BACKGROUND_THRESHOLD * BACKGROUND_THRESHOLD;
    let foreground: Vec<bool> = img.pixels().map(|p| squared_distance(p, &backdrop) > threshold2).collect();
    let (labels, count) = label_components(w, h, Connectivity::Four, |i| foreground[i], |_, _| true);

    let mut sizes = vec![0usize; count as usize + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    sizes[0] = 0;
    let (largest, &size) =
        sizes.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).expect("label 0 is always present");
    if count == 0 || (size as f64) < MIN_PLATE_FRACTION * (w * h) as f64 {
        return Err(Error::NoPlateFound);
    }
    let component: Vec<bool> = labels.iter().map(|&l| l == largest as u32).collect();

    // Holes: non-plate pixels not reachable from the border.
    let mut outside = vec![false; w * h];
    let mut queue: VecDeque<usize> = border.into_iter().filter(|&i| !component[i]).collect();
    for &i in &queue {
        outside[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for_each_neighbor(i, w, h, Connectivity::Four.offsets(), |j| {
            if !component[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        });
    }
    Mask::new(w, h, outside.into_iter().map(|o| !o).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub pixel_count: usize,
    /// Mean CIELAB color.
    pub mean_color: [f64; 3],
    pub bbox: BoundingBox,
    #[serde(skip)]
    color_sum: [f64; 3],
}

impl RegionStats {
    fn merged(&self, other: &RegionStats) -> RegionStats {
        let pixel_count = self.pixel_count + other.pixel_count;
        let color_sum = [0, 1, 2].map(|c| self.color_sum[c] + other.color_sum[c]);
        RegionStats {
            pixel_count,
            mean_color: color_sum.map(|s| s / pixel_count as f64),
            bbox: self.bbox.union(other.bbox),
            color_sum,
        }
    }
}

/// Partition of the plate into labeled connected regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    width: usize,
    height: usize,
    connectivity: Connectivity,
    labels: Vec<u32>,
    /// `stats[id - 1]` describes region `id`.
    stats: Vec<RegionStats>,
}

#[derive(Serialize)]
struct RegionJson<'a> {
    id: u32,
    pixels: usize,
    mean_color: [f64; 3],
    bbox: &'a BoundingBox,
}

impl RegionMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn region_count(&self) -> usize {
        self.stats.len()
    }

    pub fn region_ids(&self) -> impl Iterator<Item = u32> {
        1..=self.stats.len() as u32
    }

    pub fn stats(&self, id: u32) -> Option<&RegionStats> {
        id.checked_sub(1).and_then(|i| self.stats.get(i as usize))
    }

    /// Number of non-background pixels.
    pub fn labeled_pixels(&self) -> usize {
        self.stats.iter().map(|s| s.pixel_count).sum()
    }

    pub fn to_json(&self) -> String {
        let regions: Vec<RegionJson> = self
            .stats
            .iter()
            .enumerate()
            .map(|(i, s)| RegionJson {
                id: i as u32 + 1,
                pixels: s.pixel_count,
                mean_color: s.mean_color,
                bbox: &s.bbox,
            })
            .collect();
        serde_json::json!({ "regions": regions }).to_string()
    }

    /// Display color of a region: its mean color, background black.
    pub fn display_color(&self, id: u32) -> [u8; 3] {
        match self.stats(id) {
            Some(s) => lab_to_rgb(s.mean_color).map(|v| v.round() as u8),
            None => [0, 0, 0],
        }
    }

    /// Writes an 8-bit indexed PNG of the labels. Ids above 255 wrap around
    /// the palette.
    pub fn save_label_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut palette = vec![0u8; 3];
        for i in 1..=255u32 {
            // Golden-angle hue walk keeps neighbouring ids apart.
            let hue = (f64::from(i) * 137.507_764).rem_euclid(360.0);
            let rgb = crate::imagecore::hsv_to_rgb([hue, 0.65, 0.95]);
            palette.extend(rgb.map(|v| v.round() as u8));
        }
        let data: Vec<u8> = self.labels.iter().map(|&l| if l == 0 { 0 } else { ((l - 1) % 255 + 1) as u8 }).collect();
        write_png(
            path.as_ref(),
            self.width,
            self.height,
            png::ColorType::Indexed,
            png::BitDepth::Eight,
            Some(palette),
            &data,
        )
    }

    /// Checks partition properties: cover, disjointness (trivially true for a
    /// label raster), stats consistency and connectivity of every region.
    pub fn validate(&self, plate: Option<&Mask>) -> std::result::Result<(), String> {
        if self.labels.len() != self.width * self.height {
            return Err("label raster has the wrong length".into());
        }
        let mut counts = vec![0usize; self.stats.len() + 1];
        for &l in &self.labels {
            let slot = counts.get_mut(l as usize).ok_or(format!("label {l} has no stats"))?;
            *slot += 1;
        }
        for (i, s) in self.stats.iter().enumerate() {
            if s.pixel_count != counts[i + 1] || s.pixel_count == 0 {
                return Err(format!(
                    "region {} stats say {} pixels, raster has {}",
                    i + 1,
                    s.pixel_count,
                    counts[i + 1]
                ));
            }
        }
        if let Some(plate) = plate {
            for (i, (&l, &p)) in self.labels.iter().zip(plate.bits()).enumerate() {
                if (l != BACKGROUND) != p {
                    return Err(format!("pixel {i}: plate={p} label={l}"));
                }
            }
        }
        let (_, n) = label_components(
            self.width,
            self.height,
            self.connectivity,
            |i| self.labels[i] != 0,
            |a, b| self.labels[a] == self.labels[b],
        );
        if n as usize != self.stats.len() {
            return Err(format!("{} connected components for {} regions", n, self.stats.len()));
        }
        Ok(())
    }
}

/// Labels maximal connected runs of identical quantized color inside the
/// plate. Region ids follow the raster order of each region's first pixel.
pub fn region_grow(quantized: &ImageBuffer, plate: &Mask, connectivity: Connectivity) -> Result<RegionMap> {
    let (w, h) = (quantized.width(), quantized.height());
    if (plate.width, plate.height) != (w, h) {
        return Err(Error::dims(format!("{w}x{h}"), format!("{}x{}", plate.width, plate.height)));
    }
    let (labels, count) =
        label_components(w, h, connectivity, |i| plate.bits[i], |a, b| quantized.pixel_at(a) == quantized.pixel_at(b));

    let mut stats: Vec<Option<RegionStats>> = vec![None; count as usize];
    let space = quantized.color_space();
    let mut lab_cache: Option<(Vec<f64>, [f64; 3])> = None;
    for (i, &l) in labels.iter().enumerate().filter(|(_, l)| **l != BACKGROUND) {
        let px = quantized.pixel_at(i);
        let lab = match &lab_cache {
            Some((key, lab)) if key.as_slice() == px => *lab,
            _ => {
                let lab = pixel_to_lab(space, px);
                lab_cache = Some((px.to_vec(), lab));
                lab
            }
        };
        let (x, y) = (i % w, i / w);
        let entry = &mut stats[l as usize - 1];
        match entry {
            None => {
                *entry = Some(RegionStats {
                    pixel_count: 1,
                    mean_color: lab,
                    bbox: BoundingBox { min_x: x, min_y: y, max_x: x, max_y: y },
                    color_sum: lab,
                })
            }
            Some(s) => {
                s.pixel_count += 1;
                for (sum, v) in s.color_sum.iter_mut().zip(lab) {
                    *sum += v;
                }
                s.bbox = s.bbox.including(x, y);
            }
        }
    }
    let stats = stats
        .into_iter()
        .map(|s| {
            let mut s = s.expect("every label has a pixel");
            s.mean_color = s.color_sum.map(|v| v / s.pixel_count as f64);
            s
        })
        .collect();
    Ok(RegionMap { width: w, height: h, connectivity, labels, stats })
}

/// Region adjacency graph with mean-color distances on the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAdjacencyGraph {
    nodes: Vec<u32>,
    /// Keyed by `(smaller id, larger id)`.
    edges: BTreeMap<(u32, u32), f64>,
}

impl RegionAdjacencyGraph {
    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.edges.iter().map(|(&k, &v)| (k, v))
    }

    pub fn similarity(&self, a: u32, b: u32) -> Option<f64> {
        self.edges.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn neighbors(&self, id: u32) -> impl Iterator<Item = u32> + '_ {
        self.edges.keys().filter_map(move |&(a, b)| match id {
            _ if a == id => Some(b),
            _ if b == id => Some(a),
            _ => None,
        })
    }
}

fn adjacency_pairs(regions: &RegionMap) -> BTreeSet<(u32, u32)> {
    let (w, h) = (regions.width, regions.height);
    let mut pairs = BTreeSet::new();
    for (i, &a) in regions.labels.iter().enumerate().filter(|(_, l)| **l != BACKGROUND) {
        for_each_neighbor(i, w, h, regions.connectivity.forward_offsets(), |j| {
            let b = regions.labels[j];
            if b != BACKGROUND && b != a {
                pairs.insert((a.min(b), a.max(b)));
            }
        });
    }
    pairs
}

fn color_distance(a: &RegionStats, b: &RegionStats) -> f64 {
    squared_distance(&a.mean_color, &b.mean_color).sqrt()
}

pub fn build_rag(regions: &RegionMap) -> RegionAdjacencyGraph {
    let edges = adjacency_pairs(regions)
        .into_iter()
        .map(|(a, b)| {
            let d = color_distance(&regions.stats[a as usize - 1], &regions.stats[b as usize - 1]);
            ((a, b), d)
        })
        .collect();
    RegionAdjacencyGraph { nodes: regions.region_ids().collect(), edges }
}

/// Greedy region merging over the adjacency graph.
///
/// Each round merges, in order of preference:
///
/// 1. the adjacent pair with the smallest mean-color distance, if that
///    distance is at most `similarity_threshold` (ties: lowest id pair);
/// 2. otherwise the smallest region under `min_region_px` pixels that has a
///    neighbour, into its most similar neighbour (ties: lowest id).
///
/// Stats and adjacency are updated after every merge and rounds continue
/// until neither rule applies. The result is relabeled compactly in raster
/// order.
pub fn region_merge(regions: &RegionMap, similarity_threshold: f64, min_region_px: usize) -> RegionMap {
    let mut stats: BTreeMap<u32, RegionStats> =
        regions.stats.iter().enumerate().map(|(i, s)| (i as u32 + 1, s.clone())).collect();
    let mut adjacency: BTreeMap<u32, BTreeSet<u32>> = stats.keys().map(|&id| (id, BTreeSet::new())).collect();
    for (a, b) in adjacency_pairs(regions) {
        adjacency.get_mut(&a).expect("node").insert(b);
        adjacency.get_mut(&b).expect("node").insert(a);
    }
    // Original id -> surviving id.
    let mut parent: Vec<u32> = (0..=regions.stats.len() as u32).collect();

    loop {
        let similar = adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.range(a + 1..).map(move |&b| (a, b)))
            .map(|(a, b)| (color_distance(&stats[&a], &stats[&b]), a, b))
            .filter(|(d, _, _)| *d <= similarity_threshold)
            .min_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));

        let (keep, absorb) = if let Some((_, a, b)) = similar {
            (a, b)
        } else {
            let small = stats
                .iter()
                .filter(|(id, s)| s.pixel_count < min_region_px && !adjacency[id].is_empty())
                .min_by_key(|(id, s)| (s.pixel_count, **id))
                .map(|(&id, _)| id);
            let Some(small) = small else { break };
            let target = adjacency[&small]
                .iter()
                .map(|&n| (color_distance(&stats[&small], &stats[&n]), n))
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .map(|(_, n)| n)
                .expect("non-empty adjacency");
            (target, small)
        };

        let absorbed = stats.remove(&absorb).expect("live region");
        let kept = stats.get_mut(&keep).expect("live region");
        *kept = kept.merged(&absorbed);

        let moved = adjacency.remove(&absorb).expect("live region");
        for n in moved {
            let ns = adjacency.get_mut(&n).expect("live neighbour");
            ns.remove(&absorb);
            if n != keep {
                ns.insert(keep);
                adjacency.get_mut(&keep).expect("live region").insert(n);
            }
        }
        parent[absorb as usize] = keep;
    }

    let resolve = |mut id: u32| {
        while parent[id as usize] != id {
            id = parent[id as usize];
        }
        id
    };
    let mut renumber: BTreeMap<u32, u32> = BTreeMap::new();
    let mut new_stats = Vec::with_capacity(stats.len());
    let labels = regions
        .labels
        .iter()
        .map(|&l| {
            if l == BACKGROUND {
                return BACKGROUND;
            }
            let root = resolve(l);
            *renumber.entry(root).or_insert_with(|| {
                new_stats.push(stats[&root].clone());
                new_stats.len() as u32
            })
        })
        .collect();
    RegionMap {
        width: regions.width,
        height: regions.height,
        connectivity: regions.connectivity,
        labels,
        stats: new_stats,
    }
}

/// One mask per region, in id order.
pub fn extract_masks(regions: &RegionMap) -> Vec<(u32, Mask)> {
    let mut bits = vec![vec![false; regions.labels.len()]; regions.stats.len()];
    for (i, &l) in regions.labels.iter().enumerate().filter(|(_, l)| **l != BACKGROUND) {
        bits[l as usize - 1][i] = true;
    }
    bits.into_iter()
        .enumerate()
        .map(|(i, b)| (i as u32 + 1, Mask::new(regions.width, regions.height, b).expect("length matches")))
        .collect()
}

/// The plate mask implied by a region map.
pub fn plate_mask(regions: &RegionMap) -> Mask {
    Mask::new(regions.width, regions.height, regions.labels.iter().map(|&l| l != BACKGROUND).collect())
        .expect("length matches")
}

/// Blends each mask's color onto the image at 50% alpha.
pub fn overlay(img: &ImageBuffer, masks: &[(Mask, [u8; 3])]) -> Result<ImageBuffer> {
    let rgb = img.to_rgb8()?;
    let mut data: Vec<f64> = rgb.iter().map(|&v| f64::from(v)).collect();
    for (mask, color) in masks {
        if (mask.width, mask.height) != (img.width(), img.height()) {
            return Err(Error::dims(
                format!("{}x{}", img.width(), img.height()),
                format!("{}x{}", mask.width, mask.height),
            ));
        }
        for (i, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
            for c in 0..3 {
                let v = &mut data[i * 3 + c];
                *v = (0.5 * *v + 0.5 * f64::from(color[c])).round();
            }
        }
    }
    ImageBuffer::new(img.width(), img.height(), ColorSpace::Rgb, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// RGB image from a grid of palette indices.
    fn indexed(rows: &[&str], palette: &[[f64; 3]]) -> ImageBuffer {
        let h = rows.len();
        let w = rows[0].len();
        let mut data = Vec::new();
        for row in rows {
            for ch in row.bytes() {
                data.extend(palette[(ch - b'0') as usize]);
            }
        }
        ImageBuffer::new(w, h, ColorSpace::Rgb, data).unwrap()
    }

    fn full(w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |_, _| true)
    }

    const RED: [f64; 3] = [220.0, 20.0, 20.0];
    const BLUE: [f64; 3] = [20.0, 20.0, 220.0];
    const GREEN: [f64; 3] = [20.0, 200.0, 20.0];

    fn canvas(f: impl Fn(usize, usize) -> [f64; 3]) -> ImageBuffer {
        let mut data = Vec::new();
        for y in 0..256 {
            for x in 0..256 {
                data.extend(f(x, y));
            }
        }
        ImageBuffer::new(256, 256, ColorSpace::Rgb, data).unwrap()
    }

    fn in_disc(x: usize, y: usize, cx: f64, cy: f64, r: f64) -> bool {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        dx * dx + dy * dy <= r * r
    }

    #[test]
    fn disc_plate_area() {
        let img = canvas(|x, y| if in_disc(x, y, 128.0, 128.0, 100.0) { [255.0; 3] } else { [0.0; 3] });
        let mask = subtract_background(&img).unwrap();
        let analytic = std::f64::consts::PI * 100.0 * 100.0;
        let area = mask.pixel_count() as f64;
        assert!((area - analytic).abs() / analytic <= 0.01, "{area} vs {analytic}");
    }

    #[test]
    fn uniform_image_has_no_plate() {
        let img = ImageBuffer::filled(256, 256, ColorSpace::Rgb, &[90.0, 90.0, 90.0]).unwrap();
        assert!(matches!(subtract_background(&img), Err(Error::NoPlateFound)));
    }

    #[test]
    fn speck_is_dropped_and_holes_filled() {
        let img = canvas(|x, y| {
            if x < 4 && y < 4 {
                [255.0; 3]
            } else if in_disc(x, y, 128.0, 128.0, 20.0) {
                // Dark food the same color as the backdrop: a hole.
                [0.0; 3]
            } else if in_disc(x, y, 128.0, 128.0, 90.0) {
                [255.0; 3]
            } else {
                [0.0; 3]
            }
        });
        let mask = subtract_background(&img).unwrap();
        assert!(!mask.get(1, 1));
        assert!(mask.get(128, 128));
        let disc = Mask::from_fn(256, 256, |x, y| in_disc(x, y, 128.0, 128.0, 90.0));
        assert_eq!(mask, disc);
    }

    #[test]
    fn background_requires_normalized_rgb() {
        let small = ImageBuffer::filled(10, 10, ColorSpace::Rgb, &[0.0; 3]).unwrap();
        assert!(matches!(subtract_background(&small), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn grow_uniform_is_one_region() {
        let img = ImageBuffer::filled(5, 4, ColorSpace::Rgb, &RED).unwrap();
        let map = region_grow(&img, &full(5, 4), Connectivity::Four).unwrap();
        assert_eq!(map.region_count(), 1);
        assert_eq!(map.stats(1).unwrap().pixel_count, 20);
    }

    #[test]
    fn checkerboard_connectivity() {
        let img = indexed(&["01", "10"], &[RED, BLUE]);
        let four = region_grow(&img, &full(2, 2), Connectivity::Four).unwrap();
        assert_eq!(four.region_count(), 4);
        let eight = region_grow(&img, &full(2, 2), Connectivity::Eight).unwrap();
        assert_eq!(eight.region_count(), 2);
    }

    #[test]
    fn grow_rejects_mismatched_mask() {
        let img = ImageBuffer::filled(3, 3, ColorSpace::Rgb, &RED).unwrap();
        assert!(region_grow(&img, &full(3, 2), Connectivity::Four).is_err());
    }

    #[test]
    fn grow_respects_plate_mask() {
        let img = ImageBuffer::filled(4, 4, ColorSpace::Rgb, &RED).unwrap();
        // Plate split in two by a masked-out column.
        let plate = Mask::from_fn(4, 4, |x, _| x != 1);
        let map = region_grow(&img, &plate, Connectivity::Four).unwrap();
        assert_eq!(map.region_count(), 2);
        assert_eq!(map.label(1, 0), BACKGROUND);
        map.validate(Some(&plate)).unwrap();
    }

    #[test]
    fn rag_examples() {
        let one = region_grow(&indexed(&["00", "00"], &[RED]), &full(2, 2), Connectivity::Four).unwrap();
        assert_eq!(build_rag(&one).edge_count(), 0);

        let stripes = region_grow(&indexed(&["01", "01"], &[RED, BLUE]), &full(2, 2), Connectivity::Four).unwrap();
        assert_eq!(build_rag(&stripes).edge_count(), 1);

        let abc = region_grow(&indexed(&["012", "012"], &[RED, BLUE, GREEN]), &full(3, 2), Connectivity::Four).unwrap();
        let rag = build_rag(&abc);
        let edges: Vec<_> = rag.edges().map(|(k, _)| k).collect();
        assert_eq!(edges, vec![(1, 2), (2, 3)]);
        assert!(rag.similarity(1, 3).is_none());
        let expected = squared_distance(&abc.stats(1).unwrap().mean_color, &abc.stats(2).unwrap().mean_color).sqrt();
        assert_eq!(rag.similarity(2, 1), Some(expected));
        assert_eq!(rag.neighbors(2).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn identical_neighbours_merge() {
        // Two HSV greys with different (meaningless) hues: distinct quantized
        // values, identical CIELAB means.
        let data = vec![0.0, 0.0, 0.5, 120.0, 0.0, 0.5, 0.0, 0.0, 0.5, 120.0, 0.0, 0.5];
        let img = ImageBuffer::new(2, 2, ColorSpace::Hsv, data).unwrap();
        let map = region_grow(&img, &full(2, 2), Connectivity::Four).unwrap();
        assert_eq!(map.region_count(), 2);
        assert_eq!(build_rag(&map).similarity(1, 2), Some(0.0));
        let merged = region_merge(&map, 0.0, 0);
        assert_eq!(merged.region_count(), 1);
        merged.validate(None).unwrap();
    }

    #[test]
    fn merge_fixed_point() {
        let img = indexed(&["012", "012"], &[RED, BLUE, GREEN]);
        let map = region_grow(&img, &full(3, 2), Connectivity::Four).unwrap();
        let merged = region_merge(&map, 1.0, 1);
        assert_eq!(merged, map);
    }

    /// Brute-force oracle for the speck example: the speck's only neighbour
    /// is the surrounding region, so absorbing it must leave exactly the
    /// background-free raster with the speck relabeled.
    #[test]
    fn speck_absorbed() {
        let mut rows = vec![String::from("0000011111"); 10];
        rows[4] = "0002011111".into();
        rows[5] = "0022011111".into();
        let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
        let img = indexed(&rows, &[RED, BLUE, GREEN]);
        let map = region_grow(&img, &full(10, 10), Connectivity::Four).unwrap();
        assert_eq!(map.region_count(), 3);
        let merged = region_merge(&map, 5.0, 10);
        assert_eq!(merged.region_count(), 2);
        merged.validate(None).unwrap();
        // Simulated outcome: every pixel of the speck takes the red label.
        for y in 0..10 {
            for x in 0..10 {
                let expected = if x < 5 { merged.label(0, 0) } else { merged.label(9, 0) };
                assert_eq!(merged.label(x, y), expected);
            }
        }
        assert_eq!(merged.stats(merged.label(0, 0)).unwrap().pixel_count, 50);
    }

    #[test]
    fn masks_partition_the_plate() {
        let img = indexed(&["0011", "0211", "2221"], &[RED, BLUE, GREEN]);
        let plate = Mask::from_fn(4, 3, |x, y| !(x == 0 && y == 0));
        let map = region_grow(&img, &plate, Connectivity::Four).unwrap();
        let masks = extract_masks(&map);
        assert_eq!(masks.len(), map.region_count());
        let total: usize = masks.iter().map(|(_, m)| m.pixel_count()).sum();
        assert_eq!(total, plate.pixel_count());
        for (id, m) in &masks {
            assert_eq!(m.pixel_count(), map.stats(*id).unwrap().pixel_count);
        }
        let single =
            region_grow(&ImageBuffer::filled(4, 3, ColorSpace::Rgb, &RED).unwrap(), &plate, Connectivity::Four)
                .unwrap();
        assert_eq!(extract_masks(&single)[0].1, plate);
    }

    #[test]
    fn region_json_and_pngs() {
        let img = indexed(&["0011", "0011"], &[RED, BLUE]);
        let map = region_grow(&img, &full(4, 2), Connectivity::Four).unwrap();
        let json: serde_json::Value = serde_json::from_str(&map.to_json()).unwrap();
        assert_eq!(json["regions"][0]["id"], 1);
        assert_eq!(json["regions"][1]["pixels"], 4);
        assert_eq!(json["regions"][0]["mean_color"].as_array().unwrap().len(), 3);

        let dir = tempfile::tempdir().unwrap();
        map.save_label_png(dir.path().join("labels.png")).unwrap();
        let masks = extract_masks(&map);
        let mask_path = dir.path().join("mask.png");
        masks[0].1.save_png(&mask_path).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&mask_path).unwrap()));
        let reader = decoder.read_info().unwrap();
        assert_eq!(reader.info().bit_depth, png::BitDepth::One);
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(dir.path().join("labels.png")).unwrap()));
        assert_eq!(decoder.read_info().unwrap().info().color_type, png::ColorType::Indexed);

        let blended = overlay(&img, &[(masks[0].1.clone(), [0, 0, 0])]).unwrap();
        assert_eq!(blended.pixel(0, 0), &[110.0, 10.0, 10.0]);
        assert_eq!(blended.pixel(3, 0), BLUE.as_slice());
    }

    fn random_quantized(w: usize, h: usize, colors: usize, seed: u64) -> ImageBuffer {
        let palette = [RED, BLUE, GREEN, [200.0, 200.0, 20.0], [240.0, 240.0, 240.0]];
        let mut state = seed | 1;
        let mut data = Vec::new();
        // Blocky noise so regions span several pixels.
        let cells: Vec<usize> = (0..((w / 2 + 1) * (h / 2 + 1)))
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % colors as u64) as usize
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                data.extend(palette[cells[(y / 2) * (w / 2 + 1) + x / 2]]);
            }
        }
        ImageBuffer::new(w, h, ColorSpace::Rgb, data).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn partition_invariants(
            w in 1usize..24,
            h in 1usize..24,
            colors in 1usize..5,
            seed in any::<u64>(),
            eight in any::<bool>(),
            threshold in 0.0f64..80.0,
            min_px in 0usize..12,
        ) {
            let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
            let img = random_quantized(w, h, colors, seed);
            let plate = Mask::from_fn(w, h, |x, y| !(x * 7 + y * 3 + seed as usize).is_multiple_of(11));
            let grown = region_grow(&img, &plate, conn).unwrap();
            prop_assert!(grown.validate(Some(&plate)).is_ok(), "{:?}", grown.validate(Some(&plate)));
            let merged = region_merge(&grown, threshold, min_px);
            prop_assert!(merged.validate(Some(&plate)).is_ok(), "{:?}", merged.validate(Some(&plate)));
            prop_assert!(merged.region_count() <= grown.region_count());
            prop_assert_eq!(merged.labeled_pixels(), grown.labeled_pixels());

            let masks = extract_masks(&merged);
            let mut union = Mask::from_fn(w, h, |_, _| false);
            for (i, (_, a)) in masks.iter().enumerate() {
                for (_, b) in &masks[i + 1..] {
                    prop_assert!(a.intersection(b).unwrap().is_empty());
                }
                union = union.union(a).unwrap();
            }
            prop_assert_eq!(union, plate);
        }
    }
}
