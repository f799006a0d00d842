//! Shared helpers for the benchmark targets.

use pictsum_core::mat::Mat;
use pictsum_core::matching::WeightMatrix;
use rand::Rng;

/// Uniform random square weight matrix.
pub fn random_weights(n: usize, rng: &mut impl Rng) -> WeightMatrix {
    WeightMatrix::new(Mat::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0)))
        .expect("random matrix is square and finite")
}
