//! Fixtures shared by the benchmarks.

use sivi_core::sivi::{FamilyShape, SiviFamily};
use sivi_core::Rng;

pub fn family(dim: usize, width: usize, seed: u64) -> SiviFamily {
    let shape = FamilyShape {
        latent_dim: 2,
        dim,
        width,
        variance_floor: 0.01,
    };
    SiviFamily::new(shape, &mut Rng::new(seed)).expect("valid shape")
}
