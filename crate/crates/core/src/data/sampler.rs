//! Seeded subset sampling over benchmark steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::agent::EpisodeRecord;

pub const DEFAULT_SAMPLE_N: usize = 800;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    pub episode_id: String,
    pub step_index: u32,
}

/// Uniformly pick `n` distinct steps from all steps of all episodes.
///
/// The selection is returned in manifest order.
pub fn sample_steps(episodes: &[EpisodeRecord], n: usize, seed: u64) -> Result<Vec<StepRef>, DataError> {
    let universe: Vec<StepRef> = episodes
        .iter()
        .flat_map(|e| {
            (1..=e.steps.len() as u32).map(move |i| StepRef {
                episode_id: e.id().to_string(),
                step_index: i,
            })
        })
        .collect();
    if universe.len() < n {
        return Err(DataError::InsufficientSteps {
            available: universe.len(),
            requested: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, universe.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| universe[i].clone()).collect())
}
