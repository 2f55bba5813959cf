//! Adam with bias correction and an optional L2 penalty.

use crate::{ParamSet, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient of `lambda * |theta|^2` added to the loss; its gradient
    /// `2 * lambda * theta` is folded into the raw gradient.
    pub weight_decay_l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay_l2: 0.0 }
    }
}

/// First/second moment estimates for every parameter of one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let m: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self { config, step: 0, v: m.clone(), m }
    }

    pub fn first_moment(&self, i: usize) -> &[T] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[T] {
        &self.v[i]
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter set");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.epsilon);
        let l2 = T::from_f64_lossy(2.0 * c.weight_decay_l2);
        let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let values = p.value.data_mut();
            for (j, (&g, theta)) in p.grad.data().iter().zip(values.iter_mut()).enumerate() {
                let g = g + l2 * *theta;
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(values: Vec<f64>) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let n = values.len();
        ps.push("w", Tensor::new(vec![n], values).unwrap());
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = single(vec![1.0, -2.0, 0.5]);
        ps.get_mut(0).grad = Tensor::new(vec![3], vec![0.3, -7.0, 1e-2]).unwrap();
        let mut adam = AdamState::new(AdamConfig { lr: 1e-3, ..Default::default() }, &ps);
        adam.step(&mut ps);
        // m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
        let after = ps.get(0).value.data();
        let expected = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (a, e) in after.iter().zip(expected) {
            assert!((a - e).abs() < 1e-8, "{a} vs {e}");
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut ps = single(vec![1.0, -2.0]);
        let before = ps.clone();
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &ps);
        for _ in 0..10 {
            adam.step(&mut ps);
        }
        assert_eq!(ps.get(0).value, before.get(0).value);
    }

    #[test]
    fn l2_penalty_shrinks_magnitudes_monotonically() {
        let mut ps = single(vec![3.0, -4.0, 2.5]);
        let mut adam = AdamState::new(AdamConfig { lr: 1e-2, weight_decay_l2: 1e-3, ..Default::default() }, &ps);
        let mut prev: Vec<f64> = ps.get(0).value.data().iter().map(|x| x.abs()).collect();
        for _ in 0..50 {
            adam.step(&mut ps);
            let now: Vec<f64> = ps.get(0).value.data().iter().map(|x| x.abs()).collect();
            for (a, b) in now.iter().zip(&prev) {
                assert!(a < b);
            }
            prev = now;
        }
    }
}
