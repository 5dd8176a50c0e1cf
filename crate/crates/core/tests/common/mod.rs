//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use tsr_core::dataset::Shape;
use tsr_core::nnet::{
    forward, loss_cross_entropy, loss_mse, Activation, Layer, LossKind, Matrix, NetworkSpec,
    Parameters,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Loss through the public forward pass only.
pub fn batch_loss(params: &Parameters, spec: &NetworkSpec, batch: &Matrix, labels: &[usize], loss: LossKind) -> f64 {
    let out = forward(params, spec, batch).unwrap();
    match loss {
        LossKind::CrossEntropy => loss_cross_entropy(&out, labels).unwrap(),
        LossKind::Mse => {
            let mut t = Matrix::zeros(out.rows(), out.cols());
            for (r, &l) in labels.iter().enumerate() {
                t.row_mut(r)[l] = 1.0;
            }
            loss_mse(&out, &t).unwrap()
        }
    }
}

/// Central finite differences, one parameter at a time.
pub fn finite_difference_gradient(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: &Matrix,
    labels: &[usize],
    loss: LossKind,
    step: f64,
) -> Vec<f64> {
    let n = params.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.values_mut().nth(k).unwrap() += step;
        *minus.values_mut().nth(k).unwrap() -= step;
        let lp = batch_loss(&plus, spec, batch, labels, loss);
        let lm = batch_loss(&minus, spec, batch, labels, loss);
        out.push((lp - lm) / (2.0 * step));
    }
    out
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Denominator floor for relative gradient errors.
pub const GRADIENT_FLOOR: f64 = 1e-6;

pub struct GradientCase {
    pub spec: NetworkSpec,
    pub params: Parameters,
    pub batch: Matrix,
    pub labels: Vec<usize>,
    pub loss: LossKind,
}

/// A random dense sigmoid/tanh net with at most 200 parameters, random
/// (non-Glorot) weights and a random batch.
pub fn random_smooth_net(rng: &mut impl Rng) -> GradientCase {
    loop {
        let inputs = rng.random_range(2..=5);
        let classes = rng.random_range(2..=4);
        let depth = rng.random_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
        let act = if rng.random_bool(0.5) {
            Activation::Sigmoid
        } else {
            Activation::Tanh
        };
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in &hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
            });
            // mix activations inside one net too
            let f = if rng.random_bool(0.8) { act } else if act == Activation::Tanh { Activation::Sigmoid } else { Activation::Tanh };
            layers.push(Layer::Activation { function: f });
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs: classes,
        });
        let loss = if rng.random_bool(0.5) {
            LossKind::CrossEntropy
        } else {
            LossKind::Mse
        };
        if loss == LossKind::CrossEntropy || rng.random_bool(0.5) {
            layers.push(Layer::SoftmaxHead);
        }
        let spec = NetworkSpec::new(Shape::Flat(inputs), layers);
        if spec.parameter_count() > 200 {
            continue;
        }
        let mut params = Parameters::zeros(&spec).unwrap();
        for v in params.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let rows = rng.random_range(1..=6);
        let data: Vec<f64> = (0..rows * inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        return GradientCase {
            spec,
            params,
            batch: Matrix::from_vec(rows, inputs, data),
            labels,
            loss,
        };
    }
}

/// Exact k-means optimum by enumerating every assignment of points to `k`
/// labels (empty clusters allowed; they never beat the optimum).
pub fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut inertia = 0.0;
        for (p, &l) in points.iter().zip(&labels) {
            for (d, v) in p.iter().enumerate() {
                let m = sums[l][d] / counts[l] as f64;
                inertia += (v - m) * (v - m);
            }
        }
        best = best.min(inertia);
        // next assignment in base k
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}
