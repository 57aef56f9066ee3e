//! Adam optimizer with bias correction, operating on flat parameter vectors.

use crate::error::{Error, Result};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    first_moment: Vec<F>,
    second_moment: Vec<F>,
    step_count: u64,
    pub config: AdamConfig,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![F::zero(); num_params],
            second_moment: vec![F::zero(); num_params],
            step_count: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [F], grads: &[F]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "adam state holds {} parameters, got params={} grads={}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = F::of_f64(self.config.beta1);
        let b2 = F::of_f64(self.config.beta2);
        let lr = F::of_f64(self.config.lr);
        let eps = F::of_f64(self.config.epsilon);
        let corr1 = F::one() - b1.powi(t);
        let corr2 = F::one() - b2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
