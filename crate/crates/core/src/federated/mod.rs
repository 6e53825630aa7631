//! Federated round orchestration.
//!
//! A round: sample a group, securely compute the news pool, send the user
//! model and pooled representations, train locally, securely aggregate the
//! weighted gradients, then update the user model and back-propagate the
//! news-representation gradients through the server-side news encoder.

pub mod centralized;
pub mod checkpoint;
pub mod client;
pub mod run;
pub mod server;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::secure_agg::ShareSum;

pub use centralized::{centralized_gradients, centralized_step, centralized_train};
pub use client::{client_local_train, ClientState, ClientUpdate, RoundPayload};
pub use run::{run_training, write_round_log, RoundRecord, Simulation, TrainOutcome};
pub use server::{aggregate_gradients, compute_news_pool, Aggregate, PoolResult, ServerState};

/// Everything a client sends to the server. Share rows travel only between
/// clients; the server sees column sums.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ServerBound {
    PoolShareSum(ShareSum),
    GradientShareSum(ShareSum),
}

/// Mixes a master seed with tags into an independent stream seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut z = master;
    for &t in tags {
        z ^= t.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Uniform sample of `m` ids without replacement, returned in ascending
/// order (the order aggregation consumes contributions in).
pub fn sample_group(client_ids: &[String], m: usize, seed: u64) -> Result<Vec<String>> {
    if m < 2 || m > client_ids.len() {
        return Err(Error::Parameter(format!(
            "group size {m} must be between 2 and the population of {}",
            client_ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut group: Vec<String> = client_ids.choose_multiple(&mut rng, m).cloned().collect();
    group.sort();
    Ok(group)
}
