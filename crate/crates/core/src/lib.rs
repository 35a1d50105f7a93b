//! Quantum speedup of Monte Carlo estimation, simulated classically.
//!
//! The estimators operate on finite output distributions and reproduce the
//! exact measurement statistics of amplitude estimation, while a
//! [`QueryLedger`] meters the quantum resources a real device would consume.

// `!(x > 0.0)` is used on purpose throughout: it rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distribution;
pub mod error;
pub mod stats;
pub mod amplitude;
pub mod mean;
pub mod gibbs;
pub mod chain;
pub mod walk;
pub mod partition;
pub mod tvd;

pub use distribution::{
    classical_sample, make_distribution, moments, transform, truncate, Moments, QueryLedger,
    ValueDistribution, Window,
};
pub use error::{Error, Result};

pub mod validation;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for trial `index` of a run seeded with `seed`: the seed picks
/// the key and the index picks the ChaCha stream, so trials are independent
/// and reproducible in any order.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
