use serde::{Deserialize, Serialize};

use crate::error::{Result, SiviError};
use crate::ndcore::{RealArray, Rng};
use crate::sivi::LogJoint;

/// Bayesian logistic regression with standard normal covariates and an
/// isotropic Gaussian prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub theta_star: Vec<f64>,
    pub prior_var: f64,
}

impl LogisticModel {
    /// `theta* = (0.1, ..., 0.1)`, prior `N(0, 25 I)`.
    pub fn standard(dim: usize) -> Self {
        Self {
            theta_star: vec![0.1; dim],
            prior_var: 25.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }
}

/// Design matrix and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: RealArray,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `n` rows one at a time (covariates, then label), so smaller
/// datasets from the same stream are prefixes of larger ones.
pub fn generate_data(model: &LogisticModel, n: usize, rng: &mut Rng) -> Dataset {
    let d = model.dim();
    let mut x = RealArray::zeros(&[n, d]);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row_mut(i);
        rng.fill_standard_normal(row);
        let p = sigmoid(dot(row, &model.theta_star));
        y.push(if rng.uniform() < p { 1.0 } else { 0.0 });
    }
    Dataset { x, y }
}

/// Log posterior up to a constant, with analytic gradient and Hessian
/// (row-major `d x d`).
pub trait SmoothLogPosterior {
    fn dim(&self) -> usize;
    fn value_grad_hessian(&self, theta: &[f64]) -> (f64, Vec<f64>, Vec<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticPosterior<'a> {
    pub model: &'a LogisticModel,
    pub data: &'a Dataset,
}

impl LogisticPosterior<'_> {
    pub fn value_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let pv = self.model.prior_var;
        let mut v = -0.5 * dot(theta, theta) / pv;
        let mut g: Vec<f64> = theta.iter().map(|t| -t / pv).collect();
        for (x, &y) in self.data.x.row_iter().zip(&self.data.y) {
            let eta = dot(x, theta);
            v += y * eta - softplus(eta);
            let r = y - sigmoid(eta);
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj;
            }
        }
        (v, g)
    }
}

impl SmoothLogPosterior for LogisticPosterior<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value_grad_hessian(&self, theta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.model.dim();
        let (v, g) = self.value_and_grad(theta);
        let mut h = vec![0.0; d * d];
        for j in 0..d {
            h[j * d + j] = -1.0 / self.model.prior_var;
        }
        for x in self.data.x.row_iter() {
            let s = sigmoid(dot(x, theta));
            let w = s * (1.0 - s);
            for a in 0..d {
                for b in 0..d {
                    h[a * d + b] -= w * x[a] * x[b];
                }
            }
        }
        (v, g, h)
    }
}

impl LogJoint for LogisticPosterior<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_joint_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.value_and_grad(theta);
        if !v.is_finite() {
            let index = self
                .data
                .x
                .row_iter()
                .position(|x| !dot(x, theta).is_finite())
                .unwrap_or(0);
            return Err(SiviError::NonFiniteLikelihood { index });
        }
        Ok((v, g))
    }
}

/// Linear-Gaussian regression `y = X theta + N(0, 1)` with prior `N(0, prior_var I)`:
/// the conjugate stand-in for the logistic model.
#[derive(Debug, Clone, Copy)]
pub struct LinearGaussianPosterior<'a> {
    pub prior_var: f64,
    pub data: &'a Dataset,
}

impl LinearGaussianPosterior<'_> {
    /// Draws `y = X theta* + N(0, 1)` row by row.
    pub fn generate(theta_star: &[f64], n: usize, rng: &mut Rng) -> Dataset {
        let d = theta_star.len();
        let mut x = RealArray::zeros(&[n, d]);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row_mut(i);
            rng.fill_standard_normal(row);
            y.push(dot(row, theta_star) + rng.standard_normal());
        }
        Dataset { x, y }
    }

    /// Exact posterior precision `X'X + I / prior_var` and `X'y`.
    pub fn precision_and_shift(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.data.x.cols();
        let mut prec = vec![0.0; d * d];
        let mut shift = vec![0.0; d];
        for j in 0..d {
            prec[j * d + j] = 1.0 / self.prior_var;
        }
        for (x, &y) in self.data.x.row_iter().zip(&self.data.y) {
            for a in 0..d {
                shift[a] += x[a] * y;
                for b in 0..d {
                    prec[a * d + b] += x[a] * x[b];
                }
            }
        }
        (prec, shift)
    }
}

impl SmoothLogPosterior for LinearGaussianPosterior<'_> {
    fn dim(&self) -> usize {
        self.data.x.cols()
    }

    fn value_grad_hessian(&self, theta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let (prec, shift) = self.precision_and_shift();
        let mut g = shift.clone();
        let mut quad = 0.0;
        for a in 0..d {
            let mut pt = 0.0;
            for b in 0..d {
                pt += prec[a * d + b] * theta[b];
            }
            g[a] -= pt;
            quad += theta[a] * pt;
        }
        let v = dot(&shift, theta) - 0.5 * quad;
        let h = prec.iter().map(|p| -p).collect();
        (v, g, h)
    }
}
