use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bayes::SiviPosteriorConfig;
use crate::error::{Result, SiviError};
use crate::sivi::EarlyStopping;

pub const DEFAULT_MASTER_SEED: u64 = 2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
    Exp6,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [Self::Exp1, Self::Exp2, Self::Exp3, Self::Exp4, Self::Exp5, Self::Exp6];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exp1 => "exp1",
            Self::Exp2 => "exp2",
            Self::Exp3 => "exp3",
            Self::Exp4 => "exp4",
            Self::Exp5 => "exp5",
            Self::Exp6 => "exp6",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = SiviError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| SiviError::InvalidConfig(format!("unknown experiment '{s}'")))
    }
}

fn scale(value: usize, quick: bool) -> usize {
    if quick {
        (value / 10).max(1)
    } else {
        value
    }
}

/// Width sweep on the truncated planar Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Config {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub k: usize,
    pub latent_dim: usize,
    /// Scaled in quick mode.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Scaled in quick mode.
    pub train_size: usize,
    /// Scaled in quick mode.
    pub validation_size: usize,
    pub early_stopping: Option<EarlyStopping>,
    pub grid_cells: usize,
    pub grid_half_width: f64,
    /// Scaled in quick mode.
    pub tv_samples: usize,
    pub eval_atoms: usize,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Self {
            widths: vec![8, 16, 32, 64, 128, 256],
            seeds: 5,
            k: 64,
            latent_dim: 2,
            iterations: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            train_size: 100_000,
            validation_size: 10_000,
            early_stopping: Some(EarlyStopping::default()),
            grid_cells: 200,
            grid_half_width: 2.0,
            tv_samples: 100_000,
            eval_atoms: 4096,
        }
    }
}

impl Exp1Config {
    fn scaled(&self, quick: bool) -> Self {
        Self {
            iterations: scale(self.iterations, quick),
            train_size: scale(self.train_size, quick),
            validation_size: scale(self.validation_size, quick),
            tv_samples: scale(self.tv_samples, quick),
            ..self.clone()
        }
    }
}

/// Width sweep on a Gaussian and a Student-t target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Config {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub k: usize,
    /// Scaled in quick mode.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Scaled in quick mode.
    pub train_size: usize,
    /// Scaled in quick mode.
    pub validation_size: usize,
    pub early_stopping: Option<EarlyStopping>,
    /// Scaled in quick mode.
    pub kl_samples: usize,
    pub eval_atoms: usize,
    pub student_nu: f64,
    /// Weight of the Student-t5 component in the explicit-tail baseline.
    pub tail_weight: f64,
    /// Envelope variance of the fixed Orlicz reference line.
    pub orlicz_reference_variance: f64,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128, 256],
            seeds: 5,
            k: 64,
            iterations: 50_000,
            batch_size: 256,
            learning_rate: 1e-3,
            train_size: 100_000,
            validation_size: 10_000,
            early_stopping: Some(EarlyStopping::default()),
            kl_samples: 100_000,
            eval_atoms: 4096,
            student_nu: 3.0,
            tail_weight: 0.05,
            orlicz_reference_variance: 9.0,
        }
    }
}

impl Exp2Config {
    fn scaled(&self, quick: bool) -> Self {
        Self {
            iterations: scale(self.iterations, quick),
            train_size: scale(self.train_size, quick),
            validation_size: scale(self.validation_size, quick),
            kl_samples: scale(self.kl_samples, quick),
            ..self.clone()
        }
    }
}

/// Inner-sample sweep on the symmetric bimodal mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp3Config {
    pub ks: Vec<usize>,
    pub seeds: usize,
    pub width: usize,
    /// Scaled in quick mode.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Scaled in quick mode.
    pub train_size: usize,
    /// Scaled in quick mode.
    pub mode_samples: usize,
    pub grid_cells: usize,
    pub grid_half_width: f64,
    pub eval_atoms: usize,
    /// Largest K included in the TV decay slope.
    pub slope_max_k: usize,
}

impl Default for Exp3Config {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 8, 32, 128, 512],
            seeds: 5,
            width: 64,
            iterations: 20_000,
            batch_size: 512,
            learning_rate: 1e-3,
            train_size: 100_000,
            mode_samples: 100_000,
            grid_cells: 1600,
            grid_half_width: 8.0,
            eval_atoms: 4096,
            slope_max_k: 32,
        }
    }
}

impl Exp3Config {
    fn scaled(&self, quick: bool) -> Self {
        Self {
            iterations: scale(self.iterations, quick),
            train_size: scale(self.train_size, quick),
            mode_samples: scale(self.mode_samples, quick).max(crate::metrics::MIN_MODE_SAMPLES),
            ..self.clone()
        }
    }
}

/// Variance-floored fit of the three-branch mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp4Config {
    pub seeds: usize,
    pub width: usize,
    pub k: usize,
    pub latent_dim: usize,
    pub variance_floor: f64,
    /// Scaled in quick mode.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Scaled in quick mode.
    pub train_size: usize,
    /// Scaled in quick mode.
    pub validation_size: usize,
    pub early_stopping: Option<EarlyStopping>,
    /// Scaled in quick mode.
    pub branch_samples: usize,
    /// Scaled in quick mode.
    pub kl_samples: usize,
    pub eval_atoms: usize,
    pub heatmap_cells: usize,
    pub heatmap_half_width: f64,
    /// `r` in the branch bound.
    pub bound_window: f64,
    /// `s` in the branch bound.
    pub bound_scale: f64,
}

impl Default for Exp4Config {
    fn default() -> Self {
        Self {
            seeds: 5,
            width: 64,
            k: 64,
            latent_dim: 1,
            variance_floor: 0.05 * 0.05,
            iterations: 50_000,
            batch_size: 1024,
            learning_rate: 1e-3,
            train_size: 100_000,
            validation_size: 10_000,
            early_stopping: Some(EarlyStopping::default()),
            branch_samples: 100_000,
            kl_samples: 100_000,
            eval_atoms: 4096,
            heatmap_cells: 100,
            heatmap_half_width: 1.5,
            bound_window: 2.0,
            bound_scale: 0.05,
        }
    }
}

impl Exp4Config {
    fn scaled(&self, quick: bool) -> Self {
        Self {
            iterations: scale(self.iterations, quick),
            train_size: scale(self.train_size, quick),
            validation_size: scale(self.validation_size, quick),
            branch_samples: scale(self.branch_samples, quick),
            kl_samples: scale(self.kl_samples, quick),
            ..self.clone()
        }
    }
}

/// Objective-landscape study of the affine family. Grid evaluation only; quick
/// mode leaves it unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp5Config {
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub seeds: usize,
    pub theta_star: f64,
    pub grid_points: usize,
    pub grid_half_width: f64,
}

impl Default for Exp5Config {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 50, 500],
            ns: vec![100, 1000, 10_000],
            seeds: 5,
            theta_star: 0.03,
            grid_points: 601,
            grid_half_width: 3.0,
        }
    }
}

/// Coverage study for Bayesian logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp6Config {
    pub phase1_dim: usize,
    pub phase1_ns: Vec<usize>,
    pub phase2: bool,
    pub phase2_dim: usize,
    pub phase2_ns: Vec<usize>,
    pub replications: usize,
    /// Iterations and moment samples scaled in quick mode.
    pub sivi: SiviPosteriorConfig,
    /// Replaces the scaled SIVI settings in quick mode when present.
    pub quick_sivi: Option<SiviPosteriorConfig>,
}

impl Default for Exp6Config {
    fn default() -> Self {
        Self {
            phase1_dim: 5,
            phase1_ns: vec![50, 100, 200, 300],
            phase2: false,
            phase2_dim: 20,
            phase2_ns: vec![200, 500, 1000],
            replications: 100,
            sivi: SiviPosteriorConfig::default(),
            quick_sivi: Some(SiviPosteriorConfig {
                iterations: 3000,
                learning_rate: 3e-3,
                outer_samples: 8,
                moment_samples: 10_000,
                ..SiviPosteriorConfig::default()
            }),
        }
    }
}

impl Exp6Config {
    fn scaled(&self, quick: bool) -> Self {
        let sivi = match (&self.quick_sivi, quick) {
            (_, false) => self.sivi.clone(),
            (Some(q), true) => q.clone(),
            (None, true) => SiviPosteriorConfig {
                iterations: scale(self.sivi.iterations, true),
                moment_samples: scale(self.sivi.moment_samples, true).max(crate::bayes::MIN_MOMENT_SAMPLES),
                ..self.sivi.clone()
            },
        };
        Self { sivi, ..self.clone() }
    }
}

/// One run of the laboratory: the master seed, global flags, and every
/// experiment's parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub master_seed: u64,
    pub quick: bool,
    /// Overrides every experiment's seed count.
    pub seeds: Option<usize>,
    /// Fill the `seconds` column; off by default so output is reproducible.
    pub timings: bool,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    pub exp3: Exp3Config,
    pub exp4: Exp4Config,
    pub exp5: Exp5Config,
    pub exp6: Exp6Config,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            master_seed: DEFAULT_MASTER_SEED,
            quick: false,
            seeds: None,
            timings: false,
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            exp3: Exp3Config::default(),
            exp4: Exp4Config::default(),
            exp5: Exp5Config::default(),
            exp6: Exp6Config::default(),
        }
    }
}

impl LabConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// The parameters actually used: quick scaling and the seed override applied.
    pub fn effective(&self) -> Self {
        let q = self.quick;
        let mut out = Self {
            exp1: self.exp1.scaled(q),
            exp2: self.exp2.scaled(q),
            exp3: self.exp3.scaled(q),
            exp4: self.exp4.scaled(q),
            exp5: self.exp5.clone(),
            exp6: self.exp6.scaled(q),
            ..self.clone()
        };
        if let Some(s) = self.seeds {
            out.exp1.seeds = s;
            out.exp2.seeds = s;
            out.exp3.seeds = s;
            out.exp4.seeds = s;
            out.exp5.seeds = s;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SiviError::InvalidConfig(m.into()));
        if self.seeds == Some(0) {
            return bad("seeds must be >= 1");
        }
        let seeds = [
            self.exp1.seeds,
            self.exp2.seeds,
            self.exp3.seeds,
            self.exp4.seeds,
            self.exp5.seeds,
        ];
        if seeds.contains(&0) {
            return bad("seeds must be >= 1");
        }
        let lists: [(&str, bool); 7] = [
            ("exp1.widths", self.exp1.widths.is_empty()),
            ("exp2.widths", self.exp2.widths.is_empty()),
            ("exp3.ks", self.exp3.ks.is_empty()),
            ("exp5.ks", self.exp5.ks.is_empty()),
            ("exp5.ns", self.exp5.ns.is_empty()),
            ("exp6.phase1_ns", self.exp6.phase1_ns.is_empty()),
            ("exp6.phase2_ns", self.exp6.phase2_ns.is_empty()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, empty)| *empty) {
            return bad(&format!("{name} must be non-empty"));
        }
        let positive = [
            self.exp1.iterations,
            self.exp1.batch_size,
            self.exp1.k,
            self.exp1.train_size,
            self.exp1.grid_cells,
            self.exp1.eval_atoms,
            self.exp2.iterations,
            self.exp2.batch_size,
            self.exp2.k,
            self.exp2.train_size,
            self.exp2.eval_atoms,
            self.exp3.iterations,
            self.exp3.batch_size,
            self.exp3.train_size,
            self.exp3.grid_cells,
            self.exp3.eval_atoms,
            self.exp4.iterations,
            self.exp4.batch_size,
            self.exp4.k,
            self.exp4.train_size,
            self.exp4.eval_atoms,
            self.exp4.heatmap_cells,
            self.exp5.grid_points,
            self.exp6.replications,
        ];
        if positive.contains(&0) {
            return bad("sizes, iteration counts and replication counts must be >= 1");
        }
        if self.exp1.widths.contains(&0) || self.exp2.widths.contains(&0) || self.exp3.ks.contains(&0) {
            return bad("widths and K values must be >= 1");
        }
        if self.exp5.ks.contains(&0) || self.exp5.ns.contains(&0) {
            return bad("exp5 K and n values must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.exp2.tail_weight) {
            return bad("exp2.tail_weight must lie in [0, 1]");
        }
        Ok(())
    }
}
