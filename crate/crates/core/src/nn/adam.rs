//! Adam optimizer over named parameters.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::{Module, Param};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, in the module's visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<ArrayD<f32>>,
    pub v: Vec<ArrayD<f32>>,
}

impl Adam {
    /// Tracks every non-buffer parameter of `module`.
    pub fn new(config: AdamConfig, module: &dyn Module) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        module.visit("", &mut |name, p: &Param| {
            if !p.is_buffer {
                names.push(name.to_string());
                m.push(ArrayD::zeros(p.value.raw_dim()));
            }
        });
        let v = m.clone();
        Self {
            config,
            step: 0,
            names,
            m,
            v,
        }
    }

    /// One update `p -= lr * m_hat / (sqrt(v_hat) + eps)`. Parameters that
    /// never received a gradient are skipped.
    pub fn step(&mut self, module: &mut dyn Module) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = (c.learning_rate / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        let mut i = 0;
        let (ms, vs, names) = (&mut self.m, &mut self.v, &self.names);
        module.visit_mut("", &mut |name, p: &mut Param| {
            if p.is_buffer {
                return;
            }
            debug_assert_eq!(names[i], name);
            let (m, v) = (&mut ms[i], &mut vs[i]);
            i += 1;
            let Some(g) = &p.grad else {
                return;
            };
            Zip::from(&mut *m).and(&mut *v).and(&mut p.value).and(g).for_each(|m, v, w, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new(2, 1, true, &mut rng);
        let before = lin.weight.value.clone();
        lin.weight.grad_mut().fill(3.0);
        lin.bias.as_mut().unwrap().grad_mut().fill(-2.0);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &lin);
        adam.step(&mut lin);
        // with bias correction the first update is lr * sign(g) (up to eps)
        for (a, b) in lin.weight.value.iter().zip(before.iter()) {
            assert!((b - a - 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new(3, 2, true, &mut rng);
        let before = lin.weight.value.clone();
        lin.weight.grad_mut().fill(1.0);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.0, ..Default::default() }, &lin);
        adam.step(&mut lin);
        assert_eq!(lin.weight.value, before);
    }
}
