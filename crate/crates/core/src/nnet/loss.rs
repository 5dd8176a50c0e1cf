use serde::{Deserialize, Serialize};

use super::{Matrix, NnetError, Result};

/// Probabilities are clamped to at least this before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    #[default]
    CrossEntropy,
}

/// What the network output is compared against.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// One class id per row; MSE compares against the one-hot encoding.
    Classes(&'a [usize]),
    /// Dense targets with the output's shape (MSE only).
    Values(&'a Matrix),
}

impl Targets<'_> {
    fn rows(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    fn value(&self, r: usize, c: usize) -> f64 {
        match self {
            Targets::Classes(labels) => f64::from(u8::from(labels[r] == c)),
            Targets::Values(m) => m.get(r, c),
        }
    }
}

/// Mean of squared errors over every entry.
pub fn loss_mse(predictions: &Matrix, targets: &Matrix) -> Result<f64> {
    if predictions.shape() != targets.shape() {
        return Err(NnetError::shape(
            None,
            format!(
                "predictions {:?} vs targets {:?}",
                predictions.shape(),
                targets.shape()
            ),
        ));
    }
    Ok(row_losses(LossKind::Mse, predictions, Targets::Values(targets))?
        .iter()
        .sum::<f64>()
        / predictions.rows().max(1) as f64)
}

/// `-(1/N) * sum_i ln p[i][label_i]`, with probabilities floored at
/// [`PROBABILITY_FLOOR`].
pub fn loss_cross_entropy(probabilities: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(row_losses(LossKind::CrossEntropy, probabilities, Targets::Classes(labels))?
        .iter()
        .sum::<f64>()
        / probabilities.rows().max(1) as f64)
}

fn check_targets(kind: LossKind, output: &Matrix, targets: Targets<'_>) -> Result<()> {
    if targets.rows() != output.rows() {
        return Err(NnetError::shape(
            None,
            format!("{} outputs but {} targets", output.rows(), targets.rows()),
        ));
    }
    match targets {
        Targets::Classes(labels) => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= output.cols()) {
                return Err(NnetError::shape(
                    None,
                    format!("label {bad} outside {} outputs", output.cols()),
                ));
            }
        }
        Targets::Values(m) => {
            if kind == LossKind::CrossEntropy {
                return Err(NnetError::InvalidConfig(
                    "cross-entropy takes class labels, not dense targets".into(),
                ));
            }
            if m.cols() != output.cols() {
                return Err(NnetError::shape(
                    None,
                    format!("{} outputs per row, {} targets", output.cols(), m.cols()),
                ));
            }
        }
    }
    Ok(())
}

/// Loss of each row on its own; their mean is the batch loss.
pub(crate) fn row_losses(kind: LossKind, output: &Matrix, targets: Targets<'_>) -> Result<Vec<f64>> {
    check_targets(kind, output, targets)?;
    let k = output.cols();
    Ok((0..output.rows())
        .map(|r| match (kind, targets) {
            (LossKind::CrossEntropy, Targets::Classes(labels)) => {
                -output.get(r, labels[r]).max(PROBABILITY_FLOOR).ln()
            }
            _ => {
                output
                    .row(r)
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| {
                        let e = p - targets.value(r, c);
                        e * e
                    })
                    .sum::<f64>()
                    / k as f64
            }
        })
        .collect())
}

/// Mean batch loss and `d loss / d output`.
pub(crate) fn loss_and_output_gradient(
    kind: LossKind,
    output: &Matrix,
    targets: Targets<'_>,
) -> Result<(f64, Matrix)> {
    let losses = row_losses(kind, output, targets)?;
    let n = output.rows().max(1) as f64;
    let value = losses.iter().sum::<f64>() / n;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    match (kind, targets) {
        (LossKind::CrossEntropy, Targets::Classes(labels)) => {
            for (r, &label) in labels.iter().enumerate() {
                let p = output.get(r, label);
                // the floor is flat below PROBABILITY_FLOOR
                if p >= PROBABILITY_FLOOR {
                    grad.row_mut(r)[label] = -1.0 / (n * p);
                }
            }
        }
        _ => {
            let scale = 2.0 / (n * output.cols() as f64);
            for r in 0..output.rows() {
                for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
                    *g = scale * (output.get(r, c) - targets.value(r, c));
                }
            }
        }
    }
    Ok((value, grad))
}
