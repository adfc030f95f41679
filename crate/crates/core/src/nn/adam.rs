//! ADAM with bias correction over a flat parameter vector.

use serde::{Deserialize, Serialize};

use super::{NnError, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
}

impl<T: Real> AdamState<T> {
    /// Defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(param_count: usize, learning_rate: T) -> Self {
        Self {
            step_count: 0,
            learning_rate,
            beta1: T::of_f64(0.9),
            beta2: T::of_f64(0.999),
            epsilon: T::of_f64(1e-8),
            first_moment: vec![T::zero(); param_count],
            second_moment: vec![T::zero(); param_count],
        }
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    /// A non-finite gradient aborts with [`NnError::Diverged`].
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grads.len(), params.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::Diverged);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (one - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (one - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state: AdamState<f64> = AdamState::new(3, 1e-3);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        state.step(&mut params, &[0.0; 3]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_matches_bias_corrected_formula() {
        // Constant gradient 1, step 1: m_hat = 1, v_hat = 1, so the update is
        // -lr / (1 + eps).
        let lr = 1e-4;
        let mut state: AdamState<f64> = AdamState::new(1, lr);
        let mut params = vec![0.0];
        state.step(&mut params, &[1.0]).unwrap();
        let expect = -lr / (1.0 + 1e-8);
        assert!((params[0] - expect).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_reports_divergence() {
        let mut state: AdamState<f64> = AdamState::new(1, 1e-3);
        let mut params = vec![1.0];
        let err = state.step(&mut params, &[f64::NAN]).unwrap_err();
        assert_eq!(err.to_string(), "diverged");
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn hundred_steps_match_independent_reference_trajectory() {
        // Engine ADAM on f(w) = w^2 versus a from-scratch reference.
        let lr = 0.05;
        let mut state: AdamState<f64> = AdamState::new(1, lr);
        let mut w = vec![1.0f64];
        for _ in 0..100 {
            let g = 2.0 * w[0];
            state.step(&mut w, &[g]).unwrap();
        }

        // Independent reference implementation.
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let (mut m, mut v, mut wr) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=100i32 {
            let g = 2.0 * wr;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1.powi(t));
            let v_hat = v / (1.0 - beta2.powi(t));
            wr -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((w[0] - wr).abs() < 1e-6, "{} vs {}", w[0], wr);
        // And it actually descended toward the minimum.
        assert!(w[0].abs() < 1.0);
    }
}
