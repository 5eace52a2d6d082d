use std::cell::RefCell;
use std::time::Instant;

use crate::error::Result;
use crate::ndcore::{median, AdamConfig, RealArray, Rng};
use crate::sivi::{train_density_fit, EarlyStopping, LatentBank, LatentSharing, SiviFamily, TrainConfig, TrainReport};

/// Training settings shared by the density-fitting experiments.
#[derive(Debug, Clone)]
pub(crate) struct FitSpec {
    pub k: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stopping: Option<EarlyStopping>,
}

impl FitSpec {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            adam: AdamConfig::with_learning_rate(self.learning_rate),
            early_stopping: self.early_stopping,
        }
    }
}

pub(crate) fn fit_density(
    fam: &mut SiviFamily,
    train: &RealArray,
    validation: Option<&RealArray>,
    spec: &FitSpec,
    rng: &mut Rng,
) -> Result<TrainReport> {
    train_density_fit(
        fam,
        train,
        validation,
        spec.k,
        LatentSharing::Shared,
        &spec.train_config(),
        rng,
    )
}

/// Log-density of a fitted family estimated with a fixed bank of `atoms` latents.
pub(crate) struct MarginalEvaluator<'a> {
    fam: &'a SiviFamily,
    bank: LatentBank,
    scratch: RefCell<Vec<f64>>,
}

impl<'a> MarginalEvaluator<'a> {
    pub fn new(fam: &'a SiviFamily, atoms: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            fam,
            bank: fam.latent_bank(rng, atoms)?,
            scratch: RefCell::new(Vec::with_capacity(atoms)),
        })
    }

    pub fn bank(&self) -> &LatentBank {
        &self.bank
    }

    pub fn log_q(&self, x: &[f64]) -> f64 {
        self.fam
            .log_marginal_raw_with_bank(&self.bank, x, &mut self.scratch.borrow_mut())
    }

    pub fn q(&self, x: &[f64]) -> f64 {
        self.log_q(x).exp()
    }
}

pub(crate) fn params_finite(fam: &SiviFamily) -> bool {
    fam.params().iter().all(|v| v.is_finite())
}

/// Wall-clock timer that reports only when timings are enabled.
pub(crate) struct TaskTimer {
    start: Instant,
    enabled: bool,
}

impl TaskTimer {
    pub fn start(enabled: bool) -> Self {
        Self {
            start: Instant::now(),
            enabled,
        }
    }

    pub fn seconds(&self) -> Option<f64> {
        self.enabled.then(|| self.start.elapsed().as_secs_f64())
    }
}

/// Median of the finite entries; NaN when none are finite.
pub(crate) fn finite_median(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        median(&v)
    }
}

/// Log-log slope over the points where both coordinates are positive and finite.
pub(crate) fn positive_log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (*a, *b))
        .unzip();
    if xs.len() < 2 {
        f64::NAN
    } else {
        crate::ndcore::log_log_slope(&xs, &ys)
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
