//! k-means with k-means++ seeding and best-of-N restarts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ReductionError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once inertia improves by less than this fraction.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 300,
            tolerance: 1e-6,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 || !(self.tolerance > 0.0) {
            return Err(ReductionError::InvalidArgument(format!(
                "k-means restarts, max_iters and tolerance must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k` centroids; each is the mean of its assigned points.
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after seeding and after every Lloyd iteration of the winning
    /// restart.
    pub history: Vec<f64>,
    /// Which restart won.
    pub restart: usize,
}

/// Best of `config.restarts` independent runs, by final inertia (ties to the
/// earlier restart). Restart `i` draws from stream `i` of `seed`, so the
/// result equals the best of [`kmeans_restart`] over `0..restarts`.
pub fn kmeans<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    config: &KMeansConfig,
    seed: u64,
) -> Result<KMeansResult> {
    config.validate()?;
    check_points(points, k)?;
    let runs: Vec<KMeansResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| lloyd(points, k, config, seed, r))
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("restarts >= 1"))
}

/// A single seeded run (restart `restart` of [`kmeans`]).
pub fn kmeans_restart<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    config: &KMeansConfig,
    seed: u64,
    restart: usize,
) -> Result<KMeansResult> {
    config.validate()?;
    check_points(points, k)?;
    Ok(lloyd(points, k, config, seed, restart))
}

fn check_points<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<()> {
    if k == 0 {
        return Err(ReductionError::InvalidArgument("k must be positive".into()));
    }
    if k > points.len() {
        return Err(ReductionError::TooFewPoints {
            k,
            points: points.len(),
        });
    }
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim || p.iter().any(|v| !v.is_finite()) {
            return Err(ReductionError::InvalidArgument(
                "k-means points must be finite and of equal dimension".into(),
            ));
        }
    }
    Ok(())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].as_ref().to_vec());
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very top of the range
            chosen.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per point (ties to the lower id) and its squared distance.
fn assign<P: AsRef<[f64]>>(points: &[P], centroids: &[Vec<f64>], assignment: &mut [usize], dist: &mut [f64]) {
    for (i, p) in points.iter().enumerate() {
        let p = p.as_ref();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = squared_distance(p, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        assignment[i] = best;
        dist[i] = best_d;
    }
}

/// Gives each empty cluster the point farthest from its own centroid, taken
/// from a cluster that keeps at least one member.
fn repair_empty<P: AsRef<[f64]>>(
    points: &[P],
    centroids: &mut [Vec<f64>],
    assignment: &mut [usize],
    dist: &mut [f64],
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..points.len() {
            if counts[assignment[i]] >= 2 && far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("k <= n leaves a cluster with two members");
        counts[assignment[i]] -= 1;
        counts[j] = 1;
        assignment[i] = j;
        dist[i] = 0.0;
        centroids[j] = points[i].as_ref().to_vec();
    }
}

fn means<P: AsRef<[f64]>>(points: &[P], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let mut counts = vec![0usize; centroids.len()];
    for c in centroids.iter_mut() {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in centroids[a].iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        debug_assert!(n > 0 && c.len() == dim);
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
}

fn lloyd<P: AsRef<[f64]>>(points: &[P], k: usize, config: &KMeansConfig, seed: u64, restart: usize) -> KMeansResult {
    let n = points.len();
    let mut rng = rng::seeded_stream(seed, restart as u64);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0; n];
    assign(points, &centroids, &mut assignment, &mut dist);
    repair_empty(points, &mut centroids, &mut assignment, &mut dist);
    let mut inertia: f64 = dist.iter().sum();
    let mut history = vec![inertia];

    for _ in 0..config.max_iters {
        if inertia == 0.0 {
            break;
        }
        means(points, &assignment, &mut centroids);
        assign(points, &centroids, &mut assignment, &mut dist);
        repair_empty(points, &mut centroids, &mut assignment, &mut dist);
        let next: f64 = dist.iter().sum();
        history.push(next);
        let improvement = (inertia - next) / inertia;
        inertia = next;
        if improvement < config.tolerance {
            break;
        }
    }

    // report centroids that match the final assignment
    means(points, &assignment, &mut centroids);
    inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| squared_distance(p.as_ref(), &centroids[a]))
        .sum();
    history.push(inertia);

    KMeansResult {
        centroids,
        assignment,
        inertia,
        history,
        restart,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn one_centroid_per_point() {
        let p = pts(&[&[0.0, 1.0], &[3.0, -1.0], &[7.0, 2.0], &[7.5, 2.0]]);
        let r = kmeans(&p, 4, &KMeansConfig::default(), 0).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut c = r.centroids.clone();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, p);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let p = pts(&[&[0.0, 0.0], &[2.0, 0.0], &[4.0, 6.0]]);
        let r = kmeans(&p, 1, &KMeansConfig::default(), 5).unwrap();
        assert_eq!(r.centroids, vec![vec![2.0, 2.0]]);
        // (0,0): 4 + 4, (2,0): 0 + 4, (4,6): 4 + 16
        assert_eq!(r.inertia, 32.0);
    }

    #[test]
    fn two_obvious_clusters() {
        let p = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 0.0], &[10.0, 1.0]]);
        let r = kmeans(&p, 2, &KMeansConfig::default(), 1).unwrap();
        let mut c = r.centroids.clone();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert!((r.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_fill_every_cluster() {
        let p = pts(&[&[1.0], &[1.0], &[1.0], &[2.0]]);
        let r = kmeans(&p, 3, &KMeansConfig::default(), 0).unwrap();
        let mut counts = [0; 3];
        for &a in &r.assignment {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn errors() {
        let p = pts(&[&[1.0], &[2.0]]);
        assert!(matches!(
            kmeans(&p, 3, &KMeansConfig::default(), 0),
            Err(ReductionError::TooFewPoints { k: 3, points: 2 })
        ));
        assert!(kmeans(&p, 0, &KMeansConfig::default(), 0).is_err());
        let bad = KMeansConfig {
            restarts: 0,
            ..KMeansConfig::default()
        };
        assert!(kmeans(&p, 1, &bad, 0).is_err());
        assert!(kmeans(&pts(&[&[f64::NAN], &[1.0]]), 1, &KMeansConfig::default(), 0).is_err());
    }

    #[test]
    fn restarts_pick_the_best_stream() {
        let mut rng = rng::seeded(99);
        let p: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let cfg = KMeansConfig {
            restarts: 6,
            ..KMeansConfig::default()
        };
        let best = kmeans(&p, 5, &cfg, 17).unwrap();
        let singles: Vec<f64> = (0..6)
            .map(|r| kmeans_restart(&p, 5, &cfg, 17, r).unwrap().inertia)
            .collect();
        let min = singles.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(best.inertia, min);
        assert_eq!(singles[best.restart], min);
        assert_eq!(kmeans(&p, 5, &cfg, 17).unwrap(), best);
    }
}
