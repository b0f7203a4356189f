//! Healthy-plate assessment from a single top-down photograph.
//!
//! The pipeline normalizes the photo, clusters its colors with K-means,
//! grows and merges connected regions of identical quantized color inside
//! the plate, classifies every region with a one-vs-rest SVM and finally
//! scores the plate against the half fruit and vegetables / quarter
//! protein / quarter whole grains template.
//!
//! Modules map onto pipeline stages:
//!
//! * [`imagecore`]: loading, resizing, color spaces and histograms
//! * [`cluster`]: K-means, mean-shift and palette quantization
//! * [`segment`]: background removal, region growing and merging
//! * [`classify`]: region descriptors, SVM training and metrics
//! * [`nutrition`]: category fractions, balance level and recommendations
//! * [`synth`]: deterministic synthetic plates used as test oracles
//! * [`pipeline`]: the end-to-end assessment wired together

pub mod classify;
pub mod cluster;
pub mod error;
pub mod imagecore;
pub mod nutrition;
pub mod pipeline;
pub mod segment;
pub mod synth;

pub use classify::{FeatureVector, Kernel, LabeledDataset, Metrics, SvmModel, SvmParams};
pub use cluster::{ClusterModel, KMeansParams, Palette};
pub use error::{Error, Result};
pub use imagecore::{ColorSpace, Histogram, ImageBuffer};
pub use nutrition::{Category, FoodItem, HealthBand, PlateAssessment, Taxonomy};
pub use pipeline::{AssessmentReport, PipelineConfig};
pub use segment::{Connectivity, Mask, RegionAdjacencyGraph, RegionMap};
