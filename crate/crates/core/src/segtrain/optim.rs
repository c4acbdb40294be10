//! First-order optimizers over a flat parameter vector.

use super::config::OptimizerKind;
use crate::scalar::Scalar;

pub struct Optimizer<T> {
    kind: OptimizerKind,
    first: Vec<T>,
    second: Vec<T>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let second = match kind {
            OptimizerKind::AdamW { .. } => vec![T::zero(); n_params],
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            first: vec![T::zero(); n_params],
            second,
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.steps += 1;
        let lr = T::from_f64_lossy(lr);
        match self.kind {
            OptimizerKind::Sgd { momentum, weight_decay } => {
                let mu = T::from_f64_lossy(momentum);
                let wd = T::from_f64_lossy(weight_decay);
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    *v = mu * *v + g + wd * *p;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::AdamW {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let b1 = T::from_f64_lossy(beta1);
                let b2 = T::from_f64_lossy(beta2);
                let c1 = T::from_f64_lossy(1.0 / (1.0 - beta1.powi(self.steps)));
                let c2 = T::from_f64_lossy(1.0 / (1.0 - beta2.powi(self.steps)));
                let eps = T::from_f64_lossy(eps);
                let wd = T::from_f64_lossy(weight_decay);
                let one = T::one();
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let update = (*m * c1) / ((*v * c2).sqrt() + eps);
                    *p -= lr * (update + wd * *p);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimise(kind: OptimizerKind, lr: f64) -> f64 {
        // f(x) = (x - 3)^2
        let mut x = vec![0.0f64];
        let mut opt = Optimizer::new(kind, 1);
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 3.0)];
            opt.step(&mut x, &g, lr);
        }
        x[0]
    }

    #[test]
    fn optimizers_reach_quadratic_minimum() {
        let sgd = OptimizerKind::Sgd { momentum: 0.9, weight_decay: 0.0 };
        assert!((minimise(sgd, 0.01) - 3.0).abs() < 1e-6);
        let adam = OptimizerKind::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        assert!((minimise(adam, 0.01) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn first_adam_step_has_size_lr() {
        let mut x = vec![1.0f64];
        let mut opt = Optimizer::new(OptimizerKind::AdamW { beta1: 0.9, beta2: 0.999, eps: 0.0, weight_decay: 0.0 }, 1);
        opt.step(&mut x, &[0.37], 0.1);
        assert!((x[0] - 0.9).abs() < 1e-12);
    }
}
