//! Class distributions and largest-remainder quota apportionment.

use std::cmp::Ordering;

use super::{Dataset, DatasetError, Result};

/// Sample count per class id, indexed `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDistribution {
    counts: Vec<usize>,
}

impl ClassDistribution {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn nonempty_classes(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn class_distribution(dataset: &Dataset) -> ClassDistribution {
    let mut counts = vec![0; dataset.num_classes()];
    for label in dataset.labels() {
        counts[label] += 1;
    }
    ClassDistribution { counts }
}

/// How many samples of each class a reduced set keeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotaPlan {
    per_class: Vec<usize>,
    total: usize,
}

impl QuotaPlan {
    /// A hand-built plan. Feasibility against a concrete dataset is checked by
    /// [`QuotaPlan::check_feasible`].
    pub fn from_per_class(per_class: Vec<usize>) -> Self {
        let total = per_class.iter().sum();
        Self { per_class, total }
    }

    pub fn per_class(&self) -> &[usize] {
        &self.per_class
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Fails unless every quota fits its class and the plan selects a strict
    /// subset of the distribution.
    pub fn check_feasible(&self, distribution: &ClassDistribution) -> Result<()> {
        if self.per_class.len() != distribution.num_classes() {
            return Err(DatasetError::QuotaInfeasible(format!(
                "plan covers {} classes, dataset has {}",
                self.per_class.len(),
                distribution.num_classes()
            )));
        }
        for (class, (&q, &n)) in self.per_class.iter().zip(distribution.counts()).enumerate() {
            if q > n {
                return Err(DatasetError::QuotaInfeasible(format!(
                    "class {class} has {n} samples, quota asks for {q}"
                )));
            }
        }
        if self.total >= distribution.total() {
            return Err(DatasetError::QuotaInfeasible(format!(
                "quota total {} is not a strict subset of {} samples",
                self.total,
                distribution.total()
            )));
        }
        Ok(())
    }
}

/// Apportions `round_half_up(fraction * N)` seats across classes.
///
/// Floors of `fraction * counts[c]` are handed out first, then the leftover
/// seats go to the largest remainders (ties to the lower class id). Afterwards
/// every nonempty class that ended at zero takes one seat from the class most
/// above its exact share.
pub fn compute_quotas(distribution: &ClassDistribution, fraction: f64) -> Result<QuotaPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidArgument(format!(
            "fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let n = distribution.total();
    if n == 0 {
        return Err(DatasetError::InvalidArgument(
            "cannot apportion an empty distribution".into(),
        ));
    }
    let total = (fraction * n as f64 + 0.5).floor() as usize;
    let nonempty = distribution.nonempty_classes();
    if total < nonempty {
        return Err(DatasetError::QuotaInfeasible(format!(
            "{total} seats cannot cover {nonempty} nonempty classes"
        )));
    }
    if total >= n {
        return Err(DatasetError::QuotaInfeasible(format!(
            "fraction {fraction} of {n} samples rounds to the whole set"
        )));
    }

    let counts = distribution.counts();
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut per_class: Vec<usize> = exact
        .iter()
        .zip(counts)
        .map(|(&e, &c)| (e.floor() as usize).min(c))
        .collect();

    let assigned: usize = per_class.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).filter(|&c| per_class[c] < counts[c]).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - per_class[a] as f64;
        let rb = exact[b] - per_class[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    for &class in order.iter().take(total.saturating_sub(assigned)) {
        per_class[class] += 1;
    }

    // minimum-one rule
    for class in 0..counts.len() {
        if counts[class] == 0 || per_class[class] > 0 {
            continue;
        }
        let donor = (0..counts.len())
            .filter(|&c| per_class[c] >= 2)
            .max_by(|&a, &b| {
                let sa = per_class[a] as f64 - exact[a];
                let sb = per_class[b] as f64 - exact[b];
                sa.partial_cmp(&sb).unwrap_or(Ordering::Equal).then(b.cmp(&a))
            })
            .expect("total >= nonempty classes guarantees a donor");
        per_class[donor] -= 1;
        per_class[class] = 1;
    }

    Ok(QuotaPlan { per_class, total })
}
