//! Pixel-wise softmax cross-entropy.

use super::tensor::Tensor3;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Summed loss over scored pixels and its gradient with respect to the logits.
pub struct CrossEntropy<T> {
    pub loss_sum: f64,
    pub count: usize,
    pub grad: Tensor3<T>,
}

impl<T: Scalar> CrossEntropy<T> {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.loss_sum / self.count as f64)
    }
}

/// Cross-entropy of `logits` (n×H×W) against `labels` (H×W). Pixels labelled
/// `ignore` contribute neither loss nor gradient.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor3<T>,
    labels: &[u8],
    ignore: u8,
) -> Result<CrossEntropy<T>> {
    let n = logits.channels();
    let plane = logits.plane_len();
    if labels.len() != plane {
        return Err(Error::Contract(format!(
            "{} labels for a {}x{} score map",
            labels.len(),
            logits.height(),
            logits.width()
        )));
    }
    let data = logits.as_slice();
    let mut grad = Tensor3::zeros(n, logits.height(), logits.width());
    let g = grad.as_mut_slice();
    let mut loss_sum = 0.0;
    let mut count = 0;
    let mut probs = vec![T::zero(); n];
    for (p, &label) in labels.iter().enumerate() {
        if label == ignore {
            continue;
        }
        let target = usize::from(label);
        if target >= n {
            return Err(Error::Data(format!(
                "label {label} at pixel {p} exceeds model outputs ({n})"
            )));
        }
        let mut max = data[p];
        for c in 1..n {
            max = max.max(data[c * plane + p]);
        }
        let mut z = T::zero();
        for c in 0..n {
            let e = (data[c * plane + p] - max).exp();
            probs[c] = e;
            z += e;
        }
        let log_z = z.ln() + max;
        loss_sum += (log_z - data[target * plane + p]).to_f64_lossy();
        for c in 0..n {
            g[c * plane + p] = probs[c] / z;
        }
        g[target * plane + p] -= T::one();
        count += 1;
    }
    Ok(CrossEntropy {
        loss_sum,
        count,
        grad,
    })
}

/// Argmax labels where the softmax confidence strictly exceeds `threshold`,
/// `ignore` elsewhere.
pub fn pseudo_labels<T: Scalar>(logits: &Tensor3<T>, threshold: f64, ignore: u8) -> Vec<u8> {
    let n = logits.channels();
    let plane = logits.plane_len();
    let data = logits.as_slice();
    (0..plane)
        .map(|p| {
            let mut best = 0;
            let mut max = data[p];
            for c in 1..n {
                let v = data[c * plane + p];
                if v > max {
                    max = v;
                    best = c;
                }
            }
            let z: T = (0..n).map(|c| (data[c * plane + p] - max).exp()).sum();
            let conf = (T::one() / z).to_f64_lossy();
            if conf > threshold {
                best as u8
            } else {
                ignore
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_costs_ln_n() {
        for n in [2usize, 5, 9, 19] {
            let logits = Tensor3::<f64>::zeros(n, 2, 3);
            let ce = softmax_cross_entropy(&logits, &[0, 1, 0, 1, 0, 1], 255).unwrap();
            assert!((ce.mean().unwrap() - (n as f64).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn confident_correct_prediction_is_cheap() {
        let mut logits = Tensor3::<f64>::zeros(3, 1, 2);
        logits.plane_mut(2).fill(20.0);
        let ce = softmax_cross_entropy(&logits, &[2, 2], 255).unwrap();
        assert!(ce.mean().unwrap() <= 1e-3);
    }

    #[test]
    fn ignore_pixels_are_skipped() {
        let logits = Tensor3::<f32>::zeros(2, 1, 3);
        let ce = softmax_cross_entropy(&logits, &[255, 1, 255], 255).unwrap();
        assert_eq!(ce.count, 1);
        assert_eq!(ce.grad.at(0, 0, 0), 0.0);
        let ce = softmax_cross_entropy(&logits, &[255, 255, 255], 255).unwrap();
        assert!(ce.mean().is_none());
    }

    #[test]
    fn out_of_range_label_is_a_data_error() {
        let logits = Tensor3::<f32>::zeros(2, 1, 1);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[2], 255),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn gate_closes_at_one() {
        let mut logits = Tensor3::<f64>::zeros(2, 1, 2);
        logits.plane_mut(1)[0] = 50.0;
        assert_eq!(pseudo_labels(&logits, 0.9, 255), vec![1, 255]);
        assert_eq!(pseudo_labels(&logits, 1.0, 255), vec![255, 255]);
    }
}
