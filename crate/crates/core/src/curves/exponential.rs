//! `y = a * exp(-b * x) + c` by damped Gauss-Newton (Levenberg-Marquardt).
//!
//! The epoch axis is `x = 1, 2, ..., n`, unscaled, so `b` is a rate per epoch.

use super::{CurveModel, ExpFitParams, FitFailure, FitOutcome, FitParams};

pub const MAX_ITERATIONS: usize = 200;
/// Relative SSE decrease and relative step size below which the fit has converged.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-10;
/// Below `AMPLITUDE_FLOOR * max|y|` the curve is flat and `b` is unidentifiable.
pub const AMPLITUDE_FLOOR: f64 = 1e-6;

const INITIAL_DAMPING: f64 = 1e-3;
/// A step may change `b` by at most this multiple of `max(|b|, 1/n)`;
/// longer steps are damped further.
const MAX_DECAY_STEP: f64 = 2.0;
const MAX_DAMPING: f64 = 1e32;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpFitTrace {
    pub outcome: FitOutcome,
    /// Jacobian evaluations used.
    pub iterations: usize,
    /// SSE at the start and after every accepted step.
    pub sse_history: Vec<f64>,
}

pub fn fit_exponential(curve: &[f64]) -> FitOutcome {
    fit_exponential_traced(curve).outcome
}

fn model(theta: [f64; 3], x: f64) -> f64 {
    theta[0] * (-theta[1] * x).exp() + theta[2]
}

fn sse(theta: [f64; 3], y: &[f64]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let r = model(theta, (i + 1) as f64) - yi;
            r * r
        })
        .sum()
}

/// Starting point: `c` at the curve minimum, `a` the first value above it,
/// `b` from a straight-line fit of `ln(y - c + eps)` against `x`, weighted by
/// `(y - c + eps)^2` so the flat tail near `ln(eps)` does not set the slope.
fn initial_guess(y: &[f64]) -> [f64; 3] {
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let c0 = min;
    let a0 = (y[0] - c0).max(1e-6 * scale);
    let eps = if max > min { 1e-3 * (max - min) } else { 1e-6 * scale };
    let mut sw = 0.0;
    let (mut swx, mut swl) = (0.0, 0.0);
    let pts: Vec<(f64, f64, f64)> = y
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let d = v - c0 + eps;
            ((i + 1) as f64, d.ln(), d * d)
        })
        .collect();
    for &(x, l, w) in &pts {
        sw += w;
        swx += w * x;
        swl += w * l;
    }
    let (mx, ml) = (swx / sw, swl / sw);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, l, w) in &pts {
        sxy += w * (x - mx) * (l - ml);
        sxx += w * (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    let b0 = if slope.is_finite() && slope != 0.0 { -slope } else { 1.0 / y.len() as f64 };
    [a0, b0, c0]
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < f64::MIN_POSITIVE || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut out = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * out[k];
        }
        out[row] = acc / m[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn norm(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn fit_exponential_traced(y: &[f64]) -> ExpFitTrace {
    let fail = |reason, iterations, sse_history| ExpFitTrace {
        outcome: FitOutcome::Failure {
            model: CurveModel::Exponential,
            reason,
        },
        iterations,
        sse_history,
    };
    if y.len() < 4 {
        return fail(FitFailure::TooFewPoints, 0, Vec::new());
    }
    if y.iter().any(|v| !v.is_finite()) {
        return fail(FitFailure::NonFinite, 0, Vec::new());
    }

    let mut theta = initial_guess(y);
    let mut current = sse(theta, y);
    if !current.is_finite() {
        return fail(FitFailure::NonFinite, 0, Vec::new());
    }
    let mut history = vec![current];
    let mut damping = INITIAL_DAMPING;
    let mut converged = current == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        // normal equations J^T J and J^T r at theta
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (i, &yi) in y.iter().enumerate() {
            let x = (i + 1) as f64;
            let e = (-theta[1] * x).exp();
            let j = [e, -theta[0] * x * e, 1.0];
            let r = theta[0] * e + theta[2] - yi;
            for p in 0..3 {
                jtr[p] += j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        loop {
            let mut lhs = jtj;
            for (p, row) in lhs.iter_mut().enumerate() {
                row[p] += damping * jtj[p][p].max(1e-300);
            }
            let step = solve3(lhs, [-jtr[0], -jtr[1], -jtr[2]]);
            let step_limit = CONVERGENCE_TOLERANCE * (norm(theta) + CONVERGENCE_TOLERANCE);
            let small_step = |s: [f64; 3]| norm(s) <= step_limit;
            match step {
                Some(s) => {
                    let trial = [theta[0] + s[0], theta[1] + s[1], theta[2] + s[2]];
                    let trial_sse = sse(trial, y);
                    let bounded = s[1].abs() <= MAX_DECAY_STEP * theta[1].abs().max(1.0 / y.len() as f64);
                    if bounded && trial_sse.is_finite() && trial_sse < current {
                        let relative = (current - trial_sse) / current;
                        theta = trial;
                        current = trial_sse;
                        history.push(current);
                        damping = (damping / 10.0).max(1e-15);
                        converged = current == 0.0 || relative < CONVERGENCE_TOLERANCE || small_step(s);
                        break;
                    }
                    if small_step(s) {
                        converged = true;
                        break;
                    }
                }
                None if damping > MAX_DAMPING => {
                    converged = true;
                    break;
                }
                None => {}
            }
            damping *= 10.0;
            if damping > MAX_DAMPING {
                // no descent direction left at machine precision
                converged = true;
                break;
            }
        }
    }

    let params = ExpFitParams {
        a: theta[0],
        b: theta[1],
        c: theta[2],
    };
    if !(params.a.is_finite() && params.b.is_finite() && params.c.is_finite() && current.is_finite()) {
        return fail(FitFailure::NonFinite, iterations, history);
    }
    if !converged {
        return fail(FitFailure::NonConvergence, iterations, history);
    }
    if params.b <= 0.0 {
        return fail(FitFailure::NonPositiveDecay, iterations, history);
    }
    // the exponential term must be visible somewhere on x = 1..n, else b is free
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if params.a.abs() * (-params.b).exp() < AMPLITUDE_FLOOR * scale {
        return fail(FitFailure::NonConvergence, iterations, history);
    }
    ExpFitTrace {
        outcome: FitOutcome::Success {
            params: FitParams::Exponential(params),
            residual_sse: current,
        },
        iterations,
        sse_history: history,
    }
}
