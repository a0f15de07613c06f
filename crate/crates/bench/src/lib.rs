//! Fixtures shared by the benchmarks.

use ppl_core::distributions::{random_product, sample_trajectories};
use ppl_core::{ProductDist, SampleSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn instance(n: usize, max_support: usize, seed: u64) -> ProductDist {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_product(&mut rng, n, max_support).expect("valid random instance")
}

pub fn samples(pd: &ProductDist, t: usize, seed: u64) -> SampleSet {
    sample_trajectories(&pd.clone().into(), t, seed).expect("nonzero sample count")
}
