//! Labelled datasets: construction, synthetic generation, discretization and
//! stratified splitting.

mod io;
mod quota;

pub use io::{export_csv, load_csv, parse_csv, write_csv, ColumnRef, CsvSchema, LabelKind};
pub use quota::{class_distribution, compute_quotas, ClassDistribution, QuotaPlan};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", format_location(*row, *column, message))]
    Format {
        /// 1-based data row (header excluded), when the problem is row-local.
        row: Option<usize>,
        /// 0-based column.
        column: Option<usize>,
        message: String,
    },
    #[error("all {count} values equal {value}; cannot discretize a zero-width range")]
    DegenerateRange { value: f64, count: usize },
    #[error("quota infeasible: {0}")]
    QuotaInfeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sample {index}: {message}")]
    InvalidSample { index: usize, message: String },
}

fn format_location(row: Option<usize>, column: Option<usize>, message: &str) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!("format error at row {r}, column {c}: {message}"),
        (Some(r), None) => format!("format error at row {r}: {message}"),
        _ => format!("format error: {message}"),
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Layout of one sample's feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Flat(n) => write!(f, "[{n}]"),
            Shape::Image {
                channels,
                height,
                width,
            } => write!(f, "[{channels}x{height}x{width}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Position in the owning dataset, dense in `0..N`.
    pub index: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

/// An ordered, immutable collection of labelled samples.
///
/// `origin[i]` records where sample `i` came from when the dataset was carved
/// out of a larger one (split or reduction); for freshly built datasets it is
/// the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_shape: Shape,
    origin: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from `(features, label)` rows, assigning indices in
    /// row order.
    pub fn new(
        feature_shape: Shape,
        num_classes: usize,
        rows: impl IntoIterator<Item = (Vec<f64>, usize)>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(DatasetError::InvalidArgument(
                "num_classes must be positive".into(),
            ));
        }
        let mut samples = Vec::new();
        for (index, (features, label)) in rows.into_iter().enumerate() {
            if features.len() != feature_shape.len() {
                return Err(DatasetError::InvalidSample {
                    index,
                    message: format!(
                        "{} features, shape {feature_shape} needs {}",
                        features.len(),
                        feature_shape.len()
                    ),
                });
            }
            if label >= num_classes {
                return Err(DatasetError::InvalidSample {
                    index,
                    message: format!("label {label} outside 0..{num_classes}"),
                });
            }
            samples.push(Sample {
                index,
                features,
                label,
            });
        }
        let origin = (0..samples.len()).collect();
        Ok(Self {
            samples,
            num_classes,
            feature_shape,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_shape(&self) -> Shape {
        self.feature_shape
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> Option<&Sample> {
        self.samples.get(index)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// Index of each sample in the dataset this one was derived from.
    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    /// Indices of the samples of `class`, ascending.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.index)
            .collect()
    }

    /// A new dataset holding the given samples in the given order.
    ///
    /// Indices are renumbered densely; `origin` is carried through so the
    /// result still points at the root dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(indices.len());
        let mut origin = Vec::with_capacity(indices.len());
        for (new_index, &i) in indices.iter().enumerate() {
            let s = self.samples.get(i).ok_or_else(|| {
                DatasetError::InvalidArgument(format!(
                    "index {i} out of range for dataset of {} samples",
                    self.len()
                ))
            })?;
            samples.push(Sample {
                index: new_index,
                features: s.features.clone(),
                label: s.label,
            });
            origin.push(self.origin[i]);
        }
        Ok(Self {
            samples,
            num_classes: self.num_classes,
            feature_shape: self.feature_shape,
            origin,
        })
    }
}

/// Side length of the box class centers are drawn from.
const CENTER_BOX: f64 = 5.0;
const CENTER_ATTEMPTS: usize = 100;

/// Isotropic Gaussian clusters, one per class, `n_per_class` samples each.
///
/// Centers are drawn uniformly from `[-5, 5]^dim`, rejecting candidates closer
/// than `3 * spread` to an existing center (after 100 attempts the farthest
/// candidate seen is kept). Samples are stored class-major.
pub fn generate_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || dim == 0 {
        return Err(DatasetError::InvalidArgument(
            "n_per_class, num_classes and dim must be positive".into(),
        ));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(DatasetError::InvalidArgument(format!(
            "spread must be positive and finite, got {spread}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let centers = blob_centers(&mut rng, num_classes, dim, 3.0 * spread);
    let noise = Normal::new(0.0, spread).expect("spread validated above");
    let mut rows = Vec::with_capacity(n_per_class * num_classes);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let features = center.iter().map(|&c| c + noise.sample(&mut rng)).collect();
            rows.push((features, label));
        }
    }
    Dataset::new(Shape::Flat(dim), num_classes, rows)
}

fn blob_centers(rng: &mut impl Rng, count: usize, dim: usize, min_gap: f64) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..CENTER_ATTEMPTS {
            let candidate: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-CENTER_BOX..=CENTER_BOX))
                .collect();
            let gap = centers
                .iter()
                .map(|c| euclidean(c, &candidate))
                .fold(f64::INFINITY, f64::min);
            let done = gap >= min_gap;
            if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                best = Some((gap, candidate));
            }
            if done {
                break;
            }
        }
        centers.push(best.expect("at least one attempt").1);
    }
    centers
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Equal-width binning of continuous labels.
///
/// Bins are half-open `[edge_i, edge_{i+1})` except the last, which also holds
/// the maximum. Returns the class labels and the `bins + 1` edges.
pub fn discretize(values: &[f64], bins: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if bins < 2 {
        return Err(DatasetError::InvalidArgument(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    if values.is_empty() {
        return Err(DatasetError::InvalidArgument(
            "cannot discretize an empty vector".into(),
        ));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(DatasetError::InvalidArgument(format!(
            "non-finite value {bad}"
        )));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(DatasetError::DegenerateRange {
            value: min,
            count: values.len(),
        });
    }
    let width = (max - min) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| min + width * i as f64).collect();
    edges.push(max);
    let interior = &edges[1..bins];
    let labels = values
        .iter()
        .map(|&v| interior.partition_point(|&e| e <= v))
        .collect();
    Ok((labels, edges))
}

/// Stratified train/validation split.
///
/// Each class contributes its [`compute_quotas`] share of `val_fraction` to the
/// validation side, chosen uniformly at random; both halves keep the original
/// sample order.
pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let quotas = compute_quotas(&class_distribution(dataset), val_fraction)?;
    let mut rng = rng::seeded(seed);
    let mut in_validation = vec![false; dataset.len()];
    for (class, &quota) in quotas.per_class().iter().enumerate() {
        let mut members = dataset.class_indices(class);
        let (chosen, _) = members.partial_shuffle(&mut rng, quota);
        for &i in chosen.iter() {
            in_validation[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| in_validation[i]);
    Ok((dataset.subset(&train)?, dataset.subset(&val)?))
}
