//! Cross-entropy loss, numerically stabilized.

use super::Tensor;
use crate::{Error, Result};

/// Cross-entropy of a single logit vector against a class label.
///
/// Returns the loss and its gradient with respect to the logits
/// (`softmax(logits) - onehot(label)`). Stabilized by max-subtraction so
/// extreme logits neither overflow nor produce NaN.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 1 {
        return Err(Error::Shape(format!(
            "cross_entropy expects a flat logit vector, got shape {:?}",
            logits.shape()
        )));
    }
    let classes = logits.len();
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = vec![0.0; classes];
    let loss = example_loss_grad(logits.values(), label, &mut grad);
    Ok((loss, Tensor::new(vec![classes], grad)?))
}

/// Batched cross-entropy: `logits` is `[batch, classes]`, one label per row.
///
/// Returns the summed loss over the batch and per-example logit gradients
/// (row `b` is the gradient for example `b`, not scaled by the batch size).
pub fn cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [batch, classes] = match logits.shape() {
        [b, c] => [*b, *c],
        _ => {
            return Err(Error::Shape(format!(
                "cross_entropy_batch expects [batch, classes] logits, got {:?}",
                logits.shape()
            )))
        }
    };
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch
        )));
    }
    let mut grad = vec![0.0; batch * classes];
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits.values()[b * classes..(b + 1) * classes];
        total += example_loss_grad(row, label, &mut grad[b * classes..(b + 1) * classes]);
    }
    Ok((total, Tensor::new(vec![batch, classes], grad)?))
}

fn example_loss_grad(logits: &[f64], label: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &z) in grad.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *g = e;
        sum += e;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    let loss = sum.ln() - (logits[label] - max);
    grad[label] -= 1.0;
    loss
}
