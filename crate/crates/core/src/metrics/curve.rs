use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SiviError};

/// Objective values on a one-dimensional parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl ObjectiveCurve {
    /// `points` equally spaced nodes on `[lower, upper]`, inclusive.
    pub fn uniform_grid(lower: f64, upper: f64, points: usize) -> Vec<f64> {
        let step = (upper - lower) / (points - 1) as f64;
        (0..points).map(|i| lower + i as f64 * step).collect()
    }

    /// The default parameter grid: 601 points on `[-3, 3]`.
    pub fn default_grid() -> Vec<f64> {
        Self::uniform_grid(-3.0, 3.0, 601)
    }

    pub fn tabulate<F: Fn(f64) -> f64>(grid: Vec<f64>, f: F) -> Self {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self { grid, values }
    }

    /// Grid node with the largest value (first one on ties).
    pub fn argmax(&self) -> f64 {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.grid[best]
    }
}

/// `max_i |a_i - b_i|` over a shared grid.
pub fn gamma_distance(a: &ObjectiveCurve, b: &ObjectiveCurve) -> Result<f64> {
    if a.grid != b.grid || a.values.len() != a.grid.len() || b.values.len() != b.grid.len() {
        return Err(SiviError::GridMismatch);
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// `E_p[log q_lambda(X)]` for `q_lambda = N(0, 1 + lambda^2)` and `p = N(theta_star, 1)`.
pub fn population_objective_affine(lambda: f64, theta_star: f64) -> f64 {
    let v = 1.0 + lambda * lambda;
    -0.5 * (2.0 * PI * v).ln() - (1.0 + theta_star * theta_star) / (2.0 * v)
}

/// Finite-`(K, n)` surrogate for the affine family,
/// `(1/n) sum_i log((1/K) sum_k phi(x_i - lambda z_ik))`, with `latents[i*K + k] = z_ik`.
pub fn empirical_objective_affine(lambda: f64, data: &[f64], latents: &[f64], k: usize) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    let ln_k = (k as f64).ln();
    let mut total = 0.0;
    for (i, &x) in data.iter().enumerate() {
        let zs = &latents[i * k..(i + 1) * k];
        let mut max = f64::NEG_INFINITY;
        for &z in zs {
            let r = x - lambda * z;
            max = max.max(-0.5 * r * r);
        }
        let s: f64 = zs
            .iter()
            .map(|&z| {
                let r = x - lambda * z;
                (-0.5 * r * r - max).exp()
            })
            .sum();
        total += max + s.ln() - ln_k - half_ln_2pi;
    }
    total / data.len() as f64
}
