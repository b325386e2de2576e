//! Library behind the `parereg` binary: configuration, synthetic scenes and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod scene;

pub use config::AppConfig;
pub use error::{CliError, Result};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent seed for sub-task `stream` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}
