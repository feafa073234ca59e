//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
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

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

impl AdamState {
    pub fn new(param: &Tensor) -> Self {
        Self {
            step_count: 0,
            first_moment: Tensor::zeros_like(param),
            second_moment: Tensor::zeros_like(param),
        }
    }

    pub fn step(&mut self, config: &AdamConfig, params: &mut Tensor, grads: &Tensor) -> Result<()> {
        if params.shape() != grads.shape() {
            return Err(Error::dim("adam_step", params.shape(), grads.shape()));
        }
        if self.first_moment.shape() != params.shape() {
            return Err(Error::dim("adam_step", self.first_moment.shape(), params.shape()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = *config;
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - b2.powi(t);

        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        for (((p, &g), m), v) in params.data_mut().iter_mut().zip(grads.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam over an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            config,
            states: params.into_iter().map(AdamState::new).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step_count)
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: impl IntoIterator<Item = &'a Tensor>,
    ) -> Result<()> {
        let mut n = 0;
        for ((state, p), g) in self.states.iter_mut().zip(params).zip(grads) {
            state.step(&self.config, p, g)?;
            n += 1;
        }
        if n != self.states.len() {
            return Err(Error::dim("adam_step", &[self.states.len()], &[n]));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient() {
        let cfg = AdamConfig::with_learning_rate(0.01);
        let mut p = Tensor::vector(vec![0.5, -1.0]);
        let mut st = AdamState::new(&p);
        st.step(&cfg, &mut p, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        // m_hat = 1, v_hat = 1 at t = 1, so the update is lr / (1 + eps).
        let expected = 0.01 / (1.0 + 1e-8);
        assert!((p.data()[0] - (0.5 - expected)).abs() < 1e-15);
        assert!((p.data()[1] - (-1.0 - expected)).abs() < 1e-15);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_gradient_changes_nothing_but_step() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::vector(vec![0.25, 3.0]);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for _ in 0..3 {
            st.step(&cfg, &mut p, &Tensor::zeros(&[2])).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.first_moment, Tensor::zeros(&[2]));
        assert_eq!(st.second_moment, Tensor::zeros(&[2]));
        assert_eq!(st.step_count, 3);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::vector(vec![0.0; 2]);
        let mut st = AdamState::new(&p);
        assert!(st.step(&AdamConfig::default(), &mut p, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!((c.learning_rate, c.beta1, c.beta2, c.epsilon), (1e-4, 0.9, 0.999, 1e-8));
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamConfig::with_learning_rate(0.05);
        let mut p = Tensor::vector(vec![2.0, -3.0]);
        let mut st = AdamState::new(&p);
        for _ in 0..2000 {
            let g = p.map(|v| 2.0 * v);
            st.step(&cfg, &mut p, &g).unwrap();
        }
        assert!(p.norm() < 1e-3, "{:?}", p);
    }
}
