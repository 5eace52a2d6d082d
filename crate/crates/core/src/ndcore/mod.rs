//! Dense arrays, seeded RNG, small ReLU networks with reverse-mode gradients,
//! the Adam optimizer and a few symmetric-matrix helpers.

mod adam;
mod array;
pub mod linalg;
mod net;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use array::{
    compensated_sum, linear_fit, log_log_slope, log_sum_exp, mean_and_stderr, median, std_dev, CompensatedSum,
    RealArray,
};
pub use net::{DenseNet, ForwardTrace, NetGradients};
pub use rng::{Rng, RNG_ALGORITHM};
