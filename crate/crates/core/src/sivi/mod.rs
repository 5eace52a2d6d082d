//! Semi-implicit families: sampling, Monte Carlo marginal densities, the
//! density-fit and posterior surrogates with reparameterized gradients, and
//! an Adam training loop.

mod family;
mod objective;
mod train;

pub use family::{
    diag_normal_log_pdf, FamilyShape, KernelParams, LatentBank, MarginalEstimate, ReparamSample, SiviFamily,
    TailComponent, UNDERFLOW_LOG,
};
pub use objective::{
    density_fit_objective, posterior_objective, ConjugateGaussianModel, LatentSharing, LogJoint, ObjectiveValue,
    PosteriorObjective,
};
pub use train::{
    heldout_objective, minibatch, optimize, train_density_fit, train_posterior, EarlyStopping, TrainConfig, TrainReport,
};

#[cfg(test)]
mod tests;
