use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside every log.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCe,
    CategoricalCe,
    SparseCategoricalCe,
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a, T: Scalar = f32> {
    /// Same shape as the prediction.
    Dense(&'a Tensor<T>),
    /// One class index per row.
    Sparse(&'a [usize]),
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Dense target values for row `i`, materializing one-hot rows for sparse targets.
fn target_row<T: Scalar>(target: &Target<T>, i: usize, width: usize) -> Result<Vec<f64>> {
    match target {
        Target::Dense(t) => Ok(t.row(i).iter().map(|v| v.as_f64()).collect()),
        Target::Sparse(labels) => {
            let label = labels[i];
            if label >= width {
                return Err(Error::LabelOutOfRange {
                    label,
                    num_classes: width,
                });
            }
            let mut row = vec![0.0; width];
            row[label] = 1.0;
            Ok(row)
        }
    }
}

fn check_target<T: Scalar>(kind: LossKind, pred: &Tensor<T>, target: &Target<T>) -> Result<()> {
    match (kind, target) {
        (LossKind::SparseCategoricalCe, Target::Sparse(labels)) => {
            if labels.len() != pred.batch() {
                return Err(Error::ShapeMismatch {
                    op: "sparse loss",
                    left: pred.shape().to_vec(),
                    right: vec![labels.len()],
                });
            }
        }
        (LossKind::BinaryCe | LossKind::CategoricalCe, Target::Dense(t)) => {
            if t.shape() != pred.shape() {
                return Err(Error::ShapeMismatch {
                    op: "loss",
                    left: pred.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} does not accept this target form"
            )))
        }
    }
    Ok(())
}

/// Loss of every row of `pred`. Binary CE averages over the row's elements,
/// the categorical losses sum over classes.
pub fn per_sample_loss<T: Scalar>(
    kind: LossKind,
    pred: &Tensor<T>,
    target: &Target<T>,
) -> Result<Vec<f64>> {
    check_target(kind, pred, target)?;
    let width = pred.row_len();
    (0..pred.batch())
        .map(|i| {
            let y = target_row(target, i, width)?;
            let p = pred.row(i);
            let v = match kind {
                LossKind::BinaryCe => {
                    -p.iter()
                        .zip(&y)
                        .map(|(&p, &y)| {
                            let p = clamp_p(p.as_f64());
                            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
                        })
                        .sum::<f64>()
                        / width as f64
                }
                LossKind::CategoricalCe | LossKind::SparseCategoricalCe => -p
                    .iter()
                    .zip(&y)
                    .map(|(&p, &y)| y * clamp_p(p.as_f64()).ln())
                    .sum::<f64>(),
            };
            Ok(v)
        })
        .collect()
}

/// Batch-mean loss and its gradient with respect to `pred`.
pub fn loss<T: Scalar>(
    kind: LossKind,
    pred: &Tensor<T>,
    target: &Target<T>,
) -> Result<(f64, Tensor<T>)> {
    let per = per_sample_loss(kind, pred, target)?;
    let batch = pred.batch();
    let width = pred.row_len();
    let mut grad = Vec::with_capacity(pred.len());
    for i in 0..batch {
        let y = target_row(target, i, width)?;
        for (&p, &y) in pred.row(i).iter().zip(&y) {
            let raw = p.as_f64();
            let pc = clamp_p(raw);
            // The clamp is flat outside its range.
            let live = raw == pc;
            let g = match kind {
                LossKind::BinaryCe if live => (pc - y) / (pc * (1.0 - pc)) / (batch * width) as f64,
                LossKind::CategoricalCe | LossKind::SparseCategoricalCe if live => {
                    -y / pc / batch as f64
                }
                _ => 0.0,
            };
            grad.push(T::from_f64_lossy(g));
        }
    }
    let mean = per.iter().sum::<f64>() / batch as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((mean, Tensor::from_parts(pred.shape().to_vec(), grad)))
}

/// Gradient of the batch-mean loss with respect to the logits feeding a
/// sigmoid (binary CE) or softmax (categorical CE), given the probabilities:
/// `(p - y) / N`.
pub fn fused_logit_grad<T: Scalar>(
    kind: LossKind,
    probs: &Tensor<T>,
    target: &Target<T>,
) -> Result<Tensor<T>> {
    check_target(kind, probs, target)?;
    let batch = probs.batch();
    let width = probs.row_len();
    let denom = match kind {
        LossKind::BinaryCe => (batch * width) as f64,
        _ => batch as f64,
    };
    let mut grad = Vec::with_capacity(probs.len());
    for i in 0..batch {
        let y = target_row(target, i, width)?;
        grad.extend(
            probs
                .row(i)
                .iter()
                .zip(&y)
                .map(|(&p, &y)| T::from_f64_lossy((p.as_f64() - y) / denom)),
        );
    }
    Ok(Tensor::from_parts(probs.shape().to_vec(), grad))
}
