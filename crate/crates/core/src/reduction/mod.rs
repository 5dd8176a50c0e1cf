//! Training-set reduction strategies.
//!
//! Each strategy turns a dataset and a [`QuotaPlan`] into a [`ReductionPlan`]:
//! a sorted list of sample indices whose per-class counts match the quotas
//! exactly. Selection always picks real samples; nothing is synthesized.

mod kmeans;
mod plan_io;

pub use kmeans::{kmeans, kmeans_restart, KMeansConfig, KMeansResult};
pub use plan_io::{read_plan_csv, write_plan_csv};

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{class_distribution, Dataset, DatasetError, QuotaPlan};
use crate::nnet::{self, LossKind, NetworkSpec, NnetError, Parameters};
use crate::rng;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("plan references sample {index}, dataset has {len}")]
    Index { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("plan file: {0}")]
    Format(String),
}

pub type Result<T, E = ReductionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Distance,
    Loss,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Distance, Strategy::Loss, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Distance => "distance",
            Strategy::Loss => "loss",
            Strategy::Random => "random",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = ReductionError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| ReductionError::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// Which end of the loss profile the loss-based strategy keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossDirection {
    #[default]
    Highest,
    Lowest,
}

/// Selected sample indices (ascending) plus the quotas they satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionPlan {
    selected: Vec<usize>,
    strategy: Strategy,
    quotas: QuotaPlan,
}

impl ReductionPlan {
    /// Builds a plan and checks it against `dataset`: indices in range and
    /// unique, per-class counts equal to `quotas`, strict subset.
    pub fn new(mut selected: Vec<usize>, strategy: Strategy, quotas: QuotaPlan, dataset: &Dataset) -> Result<Self> {
        selected.sort_unstable();
        let plan = Self {
            selected,
            strategy,
            quotas,
        };
        plan.validate(dataset)?;
        Ok(plan)
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn quotas(&self) -> &QuotaPlan {
        &self.quotas
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let n = dataset.len();
        if let Some(&bad) = self.selected.iter().find(|&&i| i >= n) {
            return Err(ReductionError::Index { index: bad, len: n });
        }
        if self.selected.windows(2).any(|w| w[0] == w[1]) {
            return Err(ReductionError::InvalidArgument("plan repeats a sample".into()));
        }
        self.quotas.check_feasible(&class_distribution(dataset))?;
        let mut counts = vec![0usize; dataset.num_classes()];
        for &i in &self.selected {
            counts[dataset.samples()[i].label] += 1;
        }
        if counts != self.quotas.per_class() {
            return Err(ReductionError::InvalidArgument(format!(
                "selected class counts {counts:?} differ from quotas {:?}",
                self.quotas.per_class()
            )));
        }
        Ok(())
    }
}

fn feasible(dataset: &Dataset, quotas: &QuotaPlan) -> Result<()> {
    quotas.check_feasible(&class_distribution(dataset))?;
    Ok(())
}

/// Uniform sampling without replacement inside each class.
pub fn reduce_random(dataset: &Dataset, quotas: &QuotaPlan, seed: u64) -> Result<ReductionPlan> {
    feasible(dataset, quotas)?;
    let mut rng = rng::seeded(seed);
    let mut selected = Vec::with_capacity(quotas.total());
    for (class, &q) in quotas.per_class().iter().enumerate() {
        let mut members = dataset.class_indices(class);
        let (chosen, _) = members.partial_shuffle(&mut rng, q);
        selected.extend_from_slice(chosen);
    }
    ReductionPlan::new(selected, Strategy::Random, quotas.clone(), dataset)
}

/// Per-class k-means with `k = quota`, each centroid mapped to its nearest
/// not-yet-taken sample of the class.
///
/// Centroids are visited in cluster order; distance ties go to the lower
/// sample index. A class whose quota equals its size is taken whole.
pub fn reduce_distance(
    dataset: &Dataset,
    quotas: &QuotaPlan,
    config: &KMeansConfig,
    seed: u64,
) -> Result<ReductionPlan> {
    feasible(dataset, quotas)?;
    let per_class: Vec<Vec<usize>> = quotas
        .per_class()
        .par_iter()
        .enumerate()
        .map(|(class, &q)| select_by_clustering(dataset, class, q, config, rng::derive_seed(seed, class as u64)))
        .collect::<Result<_>>()?;
    ReductionPlan::new(per_class.concat(), Strategy::Distance, quotas.clone(), dataset)
}

fn select_by_clustering(
    dataset: &Dataset,
    class: usize,
    quota: usize,
    config: &KMeansConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    let members = dataset.class_indices(class);
    if quota == 0 {
        return Ok(Vec::new());
    }
    if quota >= members.len() {
        return Ok(members);
    }
    let points: Vec<&[f64]> = members
        .iter()
        .map(|&i| dataset.samples()[i].features.as_slice())
        .collect();
    let clusters = kmeans(&points, quota, config, seed)?;
    Ok(nearest_unselected(&points, &members, &clusters.centroids))
}

/// For each centroid in order, the closest member not already chosen.
fn nearest_unselected(points: &[&[f64]], members: &[usize], centroids: &[Vec<f64>]) -> Vec<usize> {
    let mut taken = vec![false; members.len()];
    let mut out = Vec::with_capacity(centroids.len());
    for c in centroids {
        let mut best: Option<(f64, usize)> = None;
        for (pos, p) in points.iter().enumerate() {
            if taken[pos] {
                continue;
            }
            let d = kmeans::squared_distance(p, c);
            // members are ascending, so strict < keeps the lower index on ties
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, pos));
            }
        }
        let (_, pos) = best.expect("fewer centroids than members");
        taken[pos] = true;
        out.push(members[pos]);
    }
    out
}

/// Mean of per-seed min-max normalized initial losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossProfile {
    pub mean_normalized_loss: Vec<f64>,
    pub seeds_used: Vec<u64>,
}

/// Rescales to `[0, 1]`; a constant vector maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range > 0.0 && range.is_finite() {
        values.iter().map(|&v| ((v - min) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Initial per-sample losses of freshly initialized networks, one
/// initialization per seed, normalized per seed and averaged.
pub fn initial_loss_profile(
    spec: &NetworkSpec,
    dataset: &Dataset,
    seeds: &[u64],
    loss: LossKind,
) -> Result<LossProfile> {
    initial_loss_profile_with(spec, dataset, seeds, loss, nnet::init)
}

/// [`initial_loss_profile`] with a custom initializer.
///
/// Per-seed vectors are summed in ascending seed order, so the profile does not
/// depend on how `seeds` is ordered.
pub fn initial_loss_profile_with<F>(
    spec: &NetworkSpec,
    dataset: &Dataset,
    seeds: &[u64],
    loss: LossKind,
    initializer: F,
) -> Result<LossProfile>
where
    F: Fn(&NetworkSpec, u64) -> nnet::Result<Parameters> + Sync,
{
    if seeds.is_empty() {
        return Err(ReductionError::InvalidArgument(
            "loss profiling needs at least one seed".into(),
        ));
    }
    let mut runs: Vec<(u64, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| -> Result<(u64, Vec<f64>)> {
            let params = initializer(spec, seed)?;
            let losses = nnet::per_sample_losses(&params, spec, dataset, loss)?;
            Ok((seed, min_max_normalize(&losses)))
        })
        .collect::<Result<_>>()?;
    runs.sort_by_key(|(seed, _)| *seed);
    let mut mean = vec![0.0; dataset.len()];
    for (_, normalized) in &runs {
        for (m, v) in mean.iter_mut().zip(normalized) {
            *m += v;
        }
    }
    let count = runs.len() as f64;
    for m in mean.iter_mut() {
        *m = (*m / count).clamp(0.0, 1.0);
    }
    Ok(LossProfile {
        mean_normalized_loss: mean,
        seeds_used: seeds.to_vec(),
    })
}

/// Per class, the quota-many samples with the most extreme profile value in
/// `direction` (ties to the lower index).
pub fn reduce_loss_based(
    profile: &LossProfile,
    dataset: &Dataset,
    quotas: &QuotaPlan,
    direction: LossDirection,
) -> Result<ReductionPlan> {
    let values = &profile.mean_normalized_loss;
    if values.len() != dataset.len() {
        return Err(ReductionError::InvalidArgument(format!(
            "profile has {} entries for {} samples",
            values.len(),
            dataset.len()
        )));
    }
    feasible(dataset, quotas)?;
    let mut selected = Vec::with_capacity(quotas.total());
    for (class, &q) in quotas.per_class().iter().enumerate() {
        let mut members = dataset.class_indices(class);
        members.sort_by(|&a, &b| {
            let by_value = values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal);
            let by_value = match direction {
                LossDirection::Highest => by_value.reverse(),
                LossDirection::Lowest => by_value,
            };
            by_value.then(a.cmp(&b))
        });
        selected.extend_from_slice(&members[..q]);
    }
    ReductionPlan::new(selected, Strategy::Loss, quotas.clone(), dataset)
}

/// The reduced dataset; `origin` keeps pointing at the source samples.
pub fn apply(plan: &ReductionPlan, dataset: &Dataset) -> Result<Dataset> {
    if let Some(&bad) = plan.selected().iter().find(|&&i| i >= dataset.len()) {
        return Err(ReductionError::Index {
            index: bad,
            len: dataset.len(),
        });
    }
    Ok(dataset.subset(plan.selected())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_quotas, generate_blobs, Shape};
    use crate::nnet::Activation;

    fn line(values: &[(f64, usize)], classes: usize) -> Dataset {
        Dataset::new(
            Shape::Flat(1),
            classes,
            values.iter().map(|&(v, l)| (vec![v], l)),
        )
        .unwrap()
    }

    #[test]
    fn random_is_deterministic_and_exact() {
        let d = generate_blobs(100, 10, 4, 1.0, 0).unwrap();
        let q = compute_quotas(&class_distribution(&d), 0.1).unwrap();
        let a = reduce_random(&d, &q, 1).unwrap();
        assert_eq!(a, reduce_random(&d, &q, 1).unwrap());
        assert_ne!(a, reduce_random(&d, &q, 2).unwrap());
        assert_eq!(a.len(), 100);
    }

    #[test]
    fn whole_dataset_quota_is_rejected() {
        let d = line(&[(0.0, 0), (1.0, 1)], 2);
        let q = QuotaPlan::from_per_class(vec![1, 1]);
        assert!(matches!(
            reduce_random(&d, &q, 0),
            Err(ReductionError::Dataset(DatasetError::QuotaInfeasible(_)))
        ));
    }

    #[test]
    fn distance_picks_cluster_representatives() {
        // class 0 = {0, 1, 10, 11}; class 1 padding keeps the plan a strict subset
        let d = line(&[(0.0, 0), (1.0, 0), (10.0, 0), (11.0, 0), (50.0, 1), (51.0, 1)], 2);
        let q = QuotaPlan::from_per_class(vec![2, 1]);
        let plan = reduce_distance(&d, &q, &KMeansConfig::default(), 3).unwrap();
        // centroids 0.5 and 10.5: ties resolve to the lower index
        let class0: Vec<usize> = plan.selected().iter().copied().filter(|&i| i < 4).collect();
        assert_eq!(class0, vec![0, 2]);
    }

    #[test]
    fn distance_saturates_small_class() {
        let d = line(&[(0.0, 0), (5.0, 0), (1.0, 1), (2.0, 1), (3.0, 1)], 2);
        let q = QuotaPlan::from_per_class(vec![2, 1]);
        let plan = reduce_distance(&d, &q, &KMeansConfig::default(), 0).unwrap();
        assert!(plan.selected().starts_with(&[0, 1]));
    }

    #[test]
    fn shared_nearest_sample_falls_through() {
        let points: Vec<&[f64]> = vec![&[0.0], &[1.0], &[5.0]];
        let centroids = vec![vec![0.9], vec![1.1]];
        assert_eq!(nearest_unselected(&points, &[10, 11, 12], &centroids), vec![11, 10]);
    }

    #[test]
    fn loss_based_takes_the_top_of_each_class() {
        let d = line(&[(0.0, 0), (0.0, 0), (0.0, 0), (0.0, 0), (0.0, 1)], 2);
        let profile = LossProfile {
            mean_normalized_loss: vec![0.9, 0.1, 0.5, 0.7, 0.3],
            seeds_used: vec![0],
        };
        let q = QuotaPlan::from_per_class(vec![2, 1]);
        let plan = reduce_loss_based(&profile, &d, &q, LossDirection::Highest).unwrap();
        assert_eq!(plan.selected(), &[0, 3, 4]);
        let low = reduce_loss_based(&profile, &d, &q, LossDirection::Lowest).unwrap();
        assert_eq!(low.selected(), &[1, 2, 4]);
    }

    #[test]
    fn flat_profile_falls_back_to_index_order() {
        let d = line(&[(0.0, 0), (0.0, 1), (0.0, 0), (0.0, 1), (0.0, 0)], 2);
        let profile = LossProfile {
            mean_normalized_loss: vec![0.0; 5],
            seeds_used: vec![0],
        };
        let q = QuotaPlan::from_per_class(vec![2, 1]);
        let plan = reduce_loss_based(&profile, &d, &q, LossDirection::Highest).unwrap();
        assert_eq!(plan.selected(), &[0, 1, 2]);
        let short = LossProfile {
            mean_normalized_loss: vec![0.0; 4],
            seeds_used: vec![0],
        };
        assert!(reduce_loss_based(&short, &d, &q, LossDirection::Highest).is_err());
    }

    #[test]
    fn profile_of_a_single_sample_is_zero() {
        let d = line(&[(0.4, 1)], 2);
        let spec = NetworkSpec::dense_classifier(Shape::Flat(1), &[3], Activation::Tanh, 2);
        let p = initial_loss_profile(&spec, &d, &[1, 2, 3], LossKind::CrossEntropy).unwrap();
        assert_eq!(p.mean_normalized_loss, vec![0.0]);
    }

    #[test]
    fn zero_init_gives_flat_profile() {
        let d = generate_blobs(5, 4, 3, 1.0, 2).unwrap();
        let spec = NetworkSpec::dense_classifier(Shape::Flat(3), &[4], Activation::Relu, 4);
        let p = initial_loss_profile_with(&spec, &d, &[0, 1], LossKind::CrossEntropy, |s, _| {
            Parameters::zeros(s)
        })
        .unwrap();
        assert!(p.mean_normalized_loss.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn profile_ignores_seed_order() {
        let d = generate_blobs(20, 3, 4, 1.5, 5).unwrap();
        let spec = NetworkSpec::dense_classifier(Shape::Flat(4), &[6], Activation::Tanh, 3);
        let seeds: Vec<u64> = (1..=10).collect();
        let reversed: Vec<u64> = seeds.iter().rev().copied().collect();
        let a = initial_loss_profile(&spec, &d, &seeds, LossKind::CrossEntropy).unwrap();
        let b = initial_loss_profile(&spec, &d, &reversed, LossKind::CrossEntropy).unwrap();
        assert_eq!(a.mean_normalized_loss, b.mean_normalized_loss);
        assert!(a.mean_normalized_loss.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(initial_loss_profile(&spec, &d, &[], LossKind::CrossEntropy).is_err());
    }

    #[test]
    fn apply_keeps_selected_samples() {
        let d = generate_blobs(30, 3, 2, 1.0, 4).unwrap();
        let q = compute_quotas(&class_distribution(&d), 0.2).unwrap();
        let plan = reduce_random(&d, &q, 8).unwrap();
        let reduced = apply(&plan, &d).unwrap();
        assert_eq!(reduced.len(), q.total());
        assert_eq!(class_distribution(&reduced).counts(), q.per_class());
        assert_eq!(reduced.origin(), plan.selected());
    }

    #[test]
    fn apply_rejects_foreign_plans() {
        let big = generate_blobs(30, 3, 2, 1.0, 4).unwrap();
        let small = generate_blobs(3, 3, 2, 1.0, 4).unwrap();
        let q = compute_quotas(&class_distribution(&big), 0.5).unwrap();
        let plan = reduce_random(&big, &q, 0).unwrap();
        assert!(matches!(apply(&plan, &small), Err(ReductionError::Index { .. })));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("nearest".parse::<Strategy>().is_err());
    }
}
