//! Adam with bias correction.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments for parameters with the given element counts.
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (first, second) = sizes
            .into_iter()
            .map(|n| (alloc::vec![0.0; n], alloc::vec![0.0; n]))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn for_params(config: AdamConfig, params: &[Tensor]) -> Self {
        Self::new(config, params.iter().map(Tensor::len))
    }

    /// One update of every parameter. `grads[i]` of `None` means a zero
    /// gradient for that parameter (its moments still decay).
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam",
                lhs: alloc::vec![self.first.len()],
                rhs: alloc::vec![params.len(), grads.len()],
            });
        }
        for (i, p) in params.iter().enumerate() {
            let glen = grads[i].map_or(p.len(), <[f64]>::len);
            if p.len() != self.first[i].len() || glen != p.len() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: alloc::vec![self.first[i].len(), glen],
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - math::pow(b1, t);
        let c2 = 1.0 - math::pow(b2, t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grads[i].map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                data[j] -= lr * mhat / (math::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = [Tensor::new(alloc::vec![3], alloc::vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut adam = AdamState::for_params(AdamConfig::with_lr(1e-2), &p);
        for _ in 0..5 {
            adam.step(&mut p, &[Some(&[0.0, 0.0, 0.0])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let cfg = AdamConfig::with_lr(0.01);
        let (x0, g) = (0.7_f64, -0.3_f64);
        let mut p = [Tensor::scalar(x0)];
        let mut adam = AdamState::for_params(cfg, &p);
        adam.step(&mut p, &[Some(&[g])]).unwrap();
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let mhat = m / (1.0 - 0.9);
        let vhat = v / (1.0 - 0.999);
        let expect = x0 - 0.01 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p[0].data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let lr = 1e-3;
        let mut p = [Tensor::scalar(0.0)];
        let mut adam = AdamState::for_params(AdamConfig::with_lr(lr), &p);
        let mut prev = 0.0;
        let mut last = 0.0;
        for _ in 0..2000 {
            adam.step(&mut p, &[Some(&[2.5])]).unwrap();
            last = p[0].data()[0] - prev;
            prev = p[0].data()[0];
        }
        assert!((last + lr).abs() < 1e-8, "last update {last}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = [Tensor::zeros(&[2])];
        let mut adam = AdamState::new(AdamConfig::default(), [3]);
        assert!(adam.step(&mut p, &[None]).is_err());
    }
}
