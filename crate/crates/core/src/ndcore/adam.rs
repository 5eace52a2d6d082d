use crate::error::{Result, SiviError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
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

/// Adam with bias correction. [`AdamState::step`] *descends* the gradient.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One update. Rejects non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        for len in [params.len(), grads.len()] {
            if len != n {
                return Err(SiviError::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(SiviError::NonFiniteGradient { index });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut adam = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.3, 0.3, 0.3]).unwrap();
        let after_first = p.clone();
        let m_before = adam.first_moment()[0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        // parameters still move by momentum; a fresh optimizer must not move at all
        assert!(adam.first_moment()[0].abs() < m_before.abs());
        let mut fresh = AdamState::new(3, AdamConfig::default());
        let mut q = after_first.clone();
        for _ in 0..5 {
            fresh.step(&mut q, &[0.0; 3]).unwrap();
        }
        assert_eq!(q, after_first);
        assert_eq!(fresh.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 at t = 1, so the step is lr * g / (|g| + eps)
        for g in [0.01, 1.0, -250.0] {
            let mut adam = AdamState::new(1, AdamConfig::default());
            let mut p = [0.0];
            adam.step(&mut p, &[g]).unwrap();
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15, "g={g}: {}", p[0]);
        }
    }

    #[test]
    fn two_steps_reduce_quadratic() {
        // loss = x^2 / 2, grad = x; x0 = 1, lr = 0.1
        // step 1: x = 1 - 0.1 = 0.9; step 2: m_hat = (0.09 + 0.09)/0.19 ... evaluated directly below
        let loss = |x: f64| 0.5 * x * x;
        let mut adam = AdamState::new(1, AdamConfig::with_learning_rate(0.1));
        let mut x = [1.0];
        let l0 = loss(x[0]);
        let g = [x[0]];
        adam.step(&mut x, &g).unwrap();
        let l1 = loss(x[0]);
        let g = [x[0]];
        adam.step(&mut x, &g).unwrap();
        let l2 = loss(x[0]);
        assert!(l1 < l0 && l2 < l1);
        // oracle: direct evaluation of the update algebra
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let mut xo = 1.0f64;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            let g = xo;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            xo -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((x[0] - xo).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut adam = AdamState::new(3, AdamConfig::default());
        let mut p = [0.0; 3];
        let err = adam.step(&mut p, &[0.0, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, SiviError::NonFiniteGradient { index: 1 }));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p, [0.0; 3]);
    }
}
