//! Degree-5 least squares on a normalized epoch axis.
//!
//! Epoch `i` of `n` (1-based) sits at `x = (i - 1) / (n - 1)` in `[0, 1]`.
//! The system is solved by Householder QR on the Vandermonde matrix.

use super::{CurveModel, FitFailure, FitOutcome, FitParams, PolyFitParams};

pub const DEGREE: usize = 5;
const TERMS: usize = DEGREE + 1;

/// Normalized abscissae for an `n`-point curve.
pub fn normalized_axis(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

pub fn eval_poly(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Least-squares solution of `a * beta = y` for a tall, full-rank `a`
/// (row-major, `rows x TERMS`).
fn householder_lstsq(mut a: Vec<[f64; TERMS]>, mut y: Vec<f64>) -> Option<[f64; TERMS]> {
    let rows = a.len();
    for col in 0..TERMS {
        let norm = (col..rows).map(|r| a[r][col] * a[r][col]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[col][col] > 0.0 { -norm } else { norm };
        // v = x - alpha * e1, stored in place below the diagonal
        let mut v: Vec<f64> = (col..rows).map(|r| a[r][col]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for k in col..TERMS {
            let dot: f64 = (col..rows).map(|r| v[r - col] * a[r][k]).sum();
            let f = 2.0 * dot / vnorm2;
            for r in col..rows {
                a[r][k] -= f * v[r - col];
            }
        }
        let dot: f64 = (col..rows).map(|r| v[r - col] * y[r]).sum();
        let f = 2.0 * dot / vnorm2;
        for r in col..rows {
            y[r] -= f * v[r - col];
        }
    }
    let mut beta = [0.0; TERMS];
    for row in (0..TERMS).rev() {
        let mut acc = y[row];
        for k in row + 1..TERMS {
            acc -= a[row][k] * beta[k];
        }
        if a[row][row] == 0.0 {
            return None;
        }
        beta[row] = acc / a[row][row];
    }
    Some(beta)
}

/// Needs at least six points; six interpolate exactly.
pub fn fit_poly5(curve: &[f64]) -> FitOutcome {
    let fail = |reason| FitOutcome::Failure {
        model: CurveModel::Poly5,
        reason,
    };
    if curve.len() < TERMS {
        return fail(FitFailure::TooFewPoints);
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return fail(FitFailure::NonFinite);
    }
    let xs = normalized_axis(curve.len());
    let design: Vec<[f64; TERMS]> = xs
        .iter()
        .map(|&x| {
            let mut row = [1.0; TERMS];
            for j in 1..TERMS {
                row[j] = row[j - 1] * x;
            }
            row
        })
        .collect();
    let Some(beta) = householder_lstsq(design, curve.to_vec()) else {
        return fail(FitFailure::NonFinite);
    };
    let residual_sse: f64 = xs
        .iter()
        .zip(curve)
        .map(|(&x, &y)| {
            let r = eval_poly(&beta, x) - y;
            r * r
        })
        .sum();
    if beta.iter().any(|v| !v.is_finite()) || !residual_sse.is_finite() {
        return fail(FitFailure::NonFinite);
    }
    FitOutcome::Success {
        params: FitParams::Poly5(PolyFitParams { coefficients: beta }),
        residual_sse,
    }
}
