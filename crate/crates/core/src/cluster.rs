//! Color clustering: K-means, flat-kernel mean-shift and palette
//! quantization.
//!
//! Both fitters first collapse identical samples into weighted unique
//! points. Lloyd iterations and mean-shift windows over the weighted set are
//! exactly the iterations over the original list, and photographs (and
//! especially synthetic plates) repeat colors heavily.

use std::collections::HashMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{pixel_to_rgb, ColorSpace, ImageBuffer};

/// Euclidean distance between two points of equal dimension.
pub fn euclidean_distance(x: &[f64], c: &[f64]) -> Result<f64> {
    if x.len() != c.len() {
        return Err(Error::dims(x.len(), c.len()));
    }
    Ok(squared_distance(x, c).sqrt())
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Index of the nearest centroid, ties going to the lowest index.
#[inline]
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input sample, in input order.
    #[serde(skip)]
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub color_space: Option<ColorSpace>,
    #[serde(default)]
    pub iterations_run: usize,
    #[serde(default)]
    pub converged: bool,
    /// Inertia after every assignment step of the returned run.
    #[serde(skip)]
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn with_color_space(mut self, space: ColorSpace) -> Self {
        self.color_space = Some(space);
        self
    }

    /// Recomputes the objective from centroids and assignments.
    pub fn recompute_inertia<P: AsRef<[f64]>>(&self, samples: &[P]) -> f64 {
        samples.iter().zip(&self.assignments).map(|(s, &j)| squared_distance(s.as_ref(), &self.centroids[j])).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cluster model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(json)?;
        if model.centroids.len() != model.k {
            return Err(Error::Model(format!("k = {} but {} centroids", model.k, model.centroids.len())));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { k: 8, max_iter: 100, tol: 1e-4, restarts: 5, seed: 0 }
    }
}

/// Distinct points with multiplicities, in order of first appearance.
struct WeightedPoints {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Index into `points` for every original sample.
    index: Vec<usize>,
}

impl WeightedPoints {
    fn collapse<P: AsRef<[f64]>>(samples: &[P]) -> Result<Self> {
        let dim = samples.first().ok_or(Error::EmptySamples)?.as_ref().len();
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut index = Vec::with_capacity(samples.len());
        for s in samples {
            let s = s.as_ref();
            if s.len() != dim {
                return Err(Error::dims(dim, s.len()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite sample".into()));
            }
            // +0.0 and -0.0 are the same point.
            let key: Vec<u64> = s.iter().map(|v| (v + 0.0).to_bits()).collect();
            let id = *seen.entry(key).or_insert_with(|| {
                points.push(s.to_vec());
                weights.push(0.0);
                points.len() - 1
            });
            weights[id] += 1.0;
            index.push(id);
        }
        Ok(Self { points, weights, index })
    }

    fn assign(&self, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, f64) {
        let pairs: Vec<(usize, f64)> = if self.points.len() > 4096 {
            self.points.par_iter().map(|p| nearest(p, centroids)).collect()
        } else {
            self.points.iter().map(|p| nearest(p, centroids)).collect()
        };
        let labels = pairs.iter().map(|p| p.0).collect();
        let dists: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let inertia = dists.iter().zip(&self.weights).map(|(d, w)| d * w).sum();
        (labels, dists, inertia)
    }
}

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    inertia: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

/// Lloyd's K-means with seeded random initialization and restarts.
///
/// Each restart picks `k` distinct samples uniformly at random as initial
/// centroids. The best run (lowest inertia, earliest restart on ties) is
/// returned. Results are bit-reproducible for a fixed seed.
pub fn kmeans_fit<P: AsRef<[f64]>>(samples: &[P], params: &KMeansParams) -> Result<ClusterModel> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if params.k == 0 || params.max_iter == 0 || params.restarts == 0 {
        return Err(Error::InvalidArgument("k, max_iter and restarts must be at least 1".into()));
    }
    if params.tol.is_nan() || params.tol < 0.0 {
        return Err(Error::InvalidArgument("tol must be non-negative".into()));
    }
    if params.k > samples.len() {
        return Err(Error::InvalidArgument(format!("k = {} exceeds sample count {}", params.k, samples.len())));
    }
    let data = WeightedPoints::collapse(samples)?;

    let mut seeder = ChaCha8Rng::seed_from_u64(params.seed);
    let seeds: Vec<u64> = (0..params.restarts).map(|_| seeder.next_u64()).collect();
    let runs: Vec<Run> = seeds.par_iter().map(|&s| lloyd(&data, params, s)).collect();

    let best = runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("at least one restart");

    Ok(ClusterModel {
        k: params.k,
        assignments: data.index.iter().map(|&u| best.labels[u]).collect(),
        centroids: best.centroids,
        inertia: best.inertia,
        color_space: None,
        iterations_run: best.iterations,
        converged: best.converged,
        inertia_history: best.history,
    })
}

fn lloyd(data: &WeightedPoints, params: &KMeansParams, seed: u64) -> Run {
    let k = params.k;
    let dim = data.points[0].len();
    let n = data.points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // With fewer distinct points than k the surplus centroids duplicate
    // existing ones and stay empty under lowest-index tie-breaking.
    let mut centroids: Vec<Vec<f64>> =
        rand::seq::index::sample(&mut rng, n, k.min(n)).into_iter().map(|i| data.points[i].clone()).collect();
    let mut fill = 0;
    while centroids.len() < k {
        centroids.push(centroids[fill].clone());
        fill += 1;
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        let (mut labels, dists, inertia) = data.assign(&centroids);
        history.push(inertia);

        let mut updated = cluster_means(data, &labels, k, dim, &centroids);
        repair_empty(data, &mut labels, &dists, &mut updated, k, dim, &centroids);

        let shift = centroids.iter().zip(&updated).map(|(a, b)| squared_distance(a, b).sqrt()).fold(0.0, f64::max);
        centroids = updated;
        if shift <= params.tol {
            converged = true;
            break;
        }
    }

    let (labels, _, inertia) = data.assign(&centroids);
    history.push(inertia);
    Run { centroids, labels, inertia, iterations, converged, history }
}

fn cluster_means(
    data: &WeightedPoints,
    labels: &[usize],
    k: usize,
    dim: usize,
    previous: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut mass = vec![0.0; k];
    for ((p, &w), &j) in data.points.iter().zip(&data.weights).zip(labels) {
        mass[j] += w;
        for (s, v) in sums[j].iter_mut().zip(p) {
            *s += w * v;
        }
    }
    sums.into_iter()
        .zip(mass)
        .enumerate()
        .map(|(j, (s, m))| if m > 0.0 { s.into_iter().map(|v| v / m).collect() } else { previous[j].clone() })
        .collect()
}

/// Moves every empty centroid onto the point farthest from its centroid.
fn repair_empty(
    data: &WeightedPoints,
    labels: &mut [usize],
    dists: &[f64],
    centroids: &mut [Vec<f64>],
    k: usize,
    dim: usize,
    previous: &[Vec<f64>],
) {
    let mut members = vec![0usize; k];
    for &j in labels.iter() {
        members[j] += 1;
    }
    if members.iter().all(|&m| m > 0) {
        return;
    }
    let mut taken = vec![false; data.points.len()];
    for j in 0..k {
        if members[j] > 0 {
            continue;
        }
        // Donor clusters must keep at least one point.
        let candidate = (0..data.points.len())
            .filter(|&i| !taken[i] && members[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        let Some(i) = candidate else { continue };
        taken[i] = true;
        members[labels[i]] -= 1;
        members[j] += 1;
        labels[i] = j;
    }
    let repaired = cluster_means(data, labels, k, dim, previous);
    centroids.clone_from_slice(&repaired);
}

/// Flat-kernel mean-shift.
///
/// Every distinct sample seeds a mode that repeatedly moves to the mean of
/// all samples within `bandwidth`. Converged modes closer than
/// `bandwidth / 2` to an already kept mode are merged (modes with larger
/// windows are kept first), and samples are assigned to the nearest
/// surviving mode.
pub fn mean_shift_fit<P: AsRef<[f64]>>(
    samples: &[P],
    bandwidth: f64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let data = WeightedPoints::collapse(samples)?;
    let bw2 = bandwidth * bandwidth;

    let window = |at: &[f64]| -> (Vec<f64>, f64) {
        let mut sum = vec![0.0; at.len()];
        let mut mass = 0.0;
        for (p, &w) in data.points.iter().zip(&data.weights) {
            if squared_distance(p, at) <= bw2 {
                mass += w;
                for (s, v) in sum.iter_mut().zip(p) {
                    *s += w * v;
                }
            }
        }
        (sum.into_iter().map(|v| v / mass).collect(), mass)
    };

    let climbed: Vec<(Vec<f64>, f64, usize, bool)> = data
        .points
        .par_iter()
        .map(|seed| {
            let mut mode = seed.clone();
            let mut steps = 0;
            let mut done = false;
            while steps < max_iter {
                steps += 1;
                let (next, _) = window(&mode);
                let shift = squared_distance(&next, &mode).sqrt();
                mode = next;
                if shift <= tol {
                    done = true;
                    break;
                }
            }
            let (_, mass) = window(&mode);
            (mode, mass, steps, done)
        })
        .collect();

    let mut order: Vec<usize> = (0..climbed.len()).collect();
    order.sort_by(|&a, &b| climbed[b].1.total_cmp(&climbed[a].1).then(a.cmp(&b)));
    let merge2 = (bandwidth / 2.0) * (bandwidth / 2.0);
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for i in order {
        let candidate = &climbed[i].0;
        if modes.iter().all(|m| squared_distance(m, candidate) >= merge2) {
            modes.push(candidate.clone());
        }
    }

    let (labels, _, inertia) = data.assign(&modes);
    Ok(ClusterModel {
        k: modes.len(),
        assignments: data.index.iter().map(|&u| labels[u]).collect(),
        centroids: modes,
        inertia,
        color_space: None,
        iterations_run: climbed.iter().map(|c| c.2).max().unwrap_or(0),
        converged: climbed.iter().all(|c| c.3),
        inertia_history: vec![inertia],
    })
}

/// Centroid colors of a model, with an RGB rendering for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<Vec<f64>>,
    pub rgb: Vec<[u8; 3]>,
    pub color_space: ColorSpace,
}

impl Palette {
    pub fn from_model(model: &ClusterModel, space: ColorSpace) -> Self {
        let rgb =
            model.centroids.iter().map(|c| pixel_to_rgb(space, c).map(|v| v.round().clamp(0.0, 255.0) as u8)).collect();
        Self { colors: model.centroids.clone(), rgb, color_space: space }
    }

    /// Writes a horizontal strip of `swatch`-pixel squares, one per color.
    pub fn save_swatch_png(&self, path: impl AsRef<Path>, swatch: usize) -> Result<()> {
        let swatch = swatch.max(1);
        let width = swatch * self.rgb.len().max(1);
        let mut bytes = Vec::with_capacity(width * swatch * 3);
        for _ in 0..swatch {
            for color in &self.rgb {
                for _ in 0..swatch {
                    bytes.extend_from_slice(color);
                }
            }
        }
        ImageBuffer::from_rgb8(width, swatch, &bytes)?.save_png(path)
    }
}

/// Fits K-means on the pixels of `img` and tags the model with its space.
pub fn kmeans_fit_image(img: &ImageBuffer, params: &KMeansParams) -> Result<ClusterModel> {
    let samples: Vec<&[f64]> = img.pixels().collect();
    let k = params.k.min(samples.len());
    let model = kmeans_fit(&samples, &KMeansParams { k, ..*params })?;
    Ok(model.with_color_space(img.color_space()))
}

/// Replaces every pixel with its nearest centroid.
pub fn quantize(img: &ImageBuffer, model: &ClusterModel) -> Result<(ImageBuffer, Palette)> {
    if let Some(space) = model.color_space {
        if space != img.color_space() {
            return Err(Error::ColorSpaceMismatch { model: space, image: img.color_space() });
        }
    }
    if model.centroids.iter().any(|c| c.len() != img.channels()) {
        return Err(Error::dims(img.channels(), "centroid dimension"));
    }
    let mut cache: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.pixels() {
        let key: Vec<u64> = px.iter().map(|v| v.to_bits()).collect();
        let j = *cache.entry(key).or_insert_with(|| nearest(px, &model.centroids).0);
        data.extend_from_slice(&model.centroids[j]);
    }
    let out = ImageBuffer::new(img.width(), img.height(), img.color_space(), data)?;
    Ok((out, Palette::from_model(model, img.color_space())))
}
