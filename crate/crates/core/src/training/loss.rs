//! Losses, evaluated in binary32 on the final layer output.

use super::data::Targets;
use super::layers::Tensor;

/// Returns the loss and its gradient with respect to `output`.
pub fn loss_and_grad(output: &Tensor, targets: &Targets) -> (f32, Tensor) {
    match targets {
        Targets::Values(t) => mse(output, t),
        Targets::Labels { labels, classes } => {
            assert_eq!(output.row_len(), *classes);
            softmax_cross_entropy(output, labels)
        }
    }
}

/// Mean squared error over every element.
pub fn mse(output: &Tensor, target: &Tensor) -> (f32, Tensor) {
    assert_eq!(output.shape, target.shape);
    let count = output.data.len() as f32;
    let mut sum = 0.0f32;
    let mut grad = Vec::with_capacity(output.data.len());
    for (&y, &t) in output.data.iter().zip(&target.data) {
        let r = y - t;
        sum += r * r;
        grad.push(2.0 * r / count);
    }
    (sum / count, Tensor::new(output.shape.clone(), grad))
}

/// Mean softmax cross-entropy; `logits` is `n x classes`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f32, Tensor) {
    let n = logits.batch();
    let k = logits.row_len();
    assert_eq!(labels.len(), n);
    let mut total = 0.0f32;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data.chunks(k).zip(labels) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f32> = row.iter().map(|&z| libm::expf(z - max)).collect();
        let sum: f32 = exps.iter().sum();
        total += libm::logf(sum) - (row[label] - max);
        for (c, &e) in exps.iter().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            grad.push((e / sum - target) / n as f32);
        }
    }
    (total / n as f32, Tensor::new(logits.shape.clone(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_value_and_grad() {
        let y = Tensor::new(vec![2, 1], vec![1.0, 3.0]);
        let t = Tensor::new(vec![2, 1], vec![0.0, 1.0]);
        let (l, g) = mse(&y, &t);
        assert_eq!(l, 2.5);
        assert_eq!(g.data, vec![1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let z = Tensor::new(vec![1, 4], vec![0.0; 4]);
        let (l, g) = softmax_cross_entropy(&z, &[2]);
        assert!((l - 4.0f32.ln()).abs() < 1e-6);
        assert_eq!(g.data, vec![0.25, 0.25, -0.75, 0.25]);
    }
}
