//! Semi-implicit variational inference laboratory.
//!
//! Semi-implicit families and their finite-`K` surrogate objectives live in
//! [`sivi`], built on the array, network and optimizer primitives in [`ndcore`].
//! [`dists`] holds the analytic targets, [`metrics`] the divergence estimators,
//! [`bayes`] the logistic-regression posterior with its Laplace baseline and
//! coverage accounting, and [`theory`] numerical probes of the approximation
//! bounds. [`harness`] runs the six experiments and writes CSV and SVG output.

pub mod bayes;
pub mod dists;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod ndcore;
pub mod sivi;
pub mod theory;

pub use error::{Result, SiviError};
pub use harness::{ExperimentId, ExperimentRecord, LabConfig};
pub use ndcore::{RealArray, Rng};
