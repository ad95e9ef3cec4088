//! Adam with bias-corrected moment estimates over flat parameter buffers.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for a list of parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes[g]` is the number of scalars in parameter group `g`.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }

    /// Applies one update to every group. `params[g]` and `grads[g]` must have
    /// the sizes given at construction.
    pub fn update(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), self.first.len(), "parameter group count changed");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for g in 0..params.len() {
            let (p, grad) = (&mut params[g], &grads[g]);
            assert_eq!(p.len(), self.first[g].len(), "parameter group {g} changed size");
            for k in 0..p.len() {
                let m = &mut self.first[g][k];
                let v = &mut self.second[g][k];
                *m = beta1 * *m + (1.0 - beta1) * grad[k];
                *v = beta2 * *v + (1.0 - beta2) * grad[k] * grad[k];
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = vec![vec![1.0, -1.0]];
        adam.update(&mut p, &[vec![0.5, -2.0]]);
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((p[0][0] - (1.0 - 1e-3 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[0][1] - (-1.0 + 1e-3 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &[3]);
        let mut p = vec![vec![1.0, 2.0, 3.0]];
        adam.update(&mut p, &[vec![1.0, 1.0, 1.0]]);
        assert_eq!(p[0], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &[1]);
        let mut p = vec![vec![3.0]];
        for _ in 0..2000 {
            let g = vec![vec![2.0 * (p[0][0] - 1.0)]];
            adam.update(&mut p, &g);
        }
        assert!((p[0][0] - 1.0).abs() < 1e-3);
    }
}
