use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SoftmaxOutput {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    pub probs: Tensor,
    /// Gradient of `loss` with respect to the logits, `(probs - onehot) / N`.
    pub grad: Tensor,
}

/// Row-wise softmax of `(N, classes, 1, 1)` logits (shifted by the row
/// maximum), with cross-entropy against integer labels.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxOutput> {
    let [n, classes, h, w] = logits.shape();
    if h != 1 || w != 1 {
        return Err(Error::invalid(format!(
            "softmax expects (N, classes, 1, 1) logits, got {:?}",
            logits.shape()
        )));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        loss -= logits_log_prob(logits.sample(i), label);
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n as f64);
    }
    Ok(SoftmaxOutput {
        loss: loss / n as f64,
        probs,
        grad,
    })
}

/// Row-wise softmax probabilities.
pub fn softmax(logits: &Tensor) -> Tensor {
    let classes = logits.sample_len();
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_exact_mut(classes.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    probs
}

fn logits_log_prob(row: &[f64], label: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[label] - lse
}
