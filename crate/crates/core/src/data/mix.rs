//! Mixed-modality assignment of training instructions.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{DataError, Sample};
use crate::policy::Modality;
use crate::seed::derive_seed;

pub const DEFAULT_SPEECH_FRACTION: f64 = 0.7;

/// Which samples get spoken instructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub speech_fraction: f64,
    pub seed: u64,
    pub stratified_by_source: bool,
    pub assignment: BTreeMap<String, Modality>,
}

impl MixPlan {
    pub fn count(&self, modality: Modality) -> usize {
        self.assignment.values().filter(|m| **m == modality).count()
    }
}

/// `round(fraction * n)` with ties to even.
///
/// The product is snapped to 1e-9 first so that values such as
/// `0.7 * 5 = 3.4999999999999996` count as the tie they represent.
pub fn speech_count(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let snapped = (x * 1e9).round() / 1e9;
    snapped.round_ties_even() as usize
}

fn check_fraction(fraction: f64) -> Result<(), DataError> {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(DataError::InvalidFraction(fraction))
    }
}

/// Ids ranked by a per-id hash of the seed: a seeded uniform shuffle that
/// does not depend on input order.
fn assign(ids: &[&str], fraction: f64, seed: u64, out: &mut BTreeMap<String, Modality>) {
    let mut ranked: Vec<(u64, &str)> = ids.iter().map(|id| (derive_seed(seed, &["mix", id]), *id)).collect();
    ranked.sort_unstable();
    let k = speech_count(ids.len(), fraction);
    for (i, (_, id)) in ranked.into_iter().enumerate() {
        out.insert(id.to_string(), if i < k { Modality::Speech } else { Modality::Text });
    }
}

fn unique_ids(samples: &[Sample]) -> Result<Vec<&str>, DataError> {
    let mut seen = HashSet::new();
    samples
        .iter()
        .map(|s| {
            if seen.insert(s.id.as_str()) {
                Ok(s.id.as_str())
            } else {
                Err(DataError::DuplicateId(s.id.clone()))
            }
        })
        .collect()
}

/// Assign exactly `round(speech_fraction * N)` samples to speech.
pub fn mix_modalities(samples: &[Sample], speech_fraction: f64, seed: u64) -> Result<MixPlan, DataError> {
    check_fraction(speech_fraction)?;
    let ids = unique_ids(samples)?;
    let mut assignment = BTreeMap::new();
    assign(&ids, speech_fraction, seed, &mut assignment);
    Ok(MixPlan {
        speech_fraction,
        seed,
        stratified_by_source: false,
        assignment,
    })
}

/// Apply the fraction within each `source` separately. The global count is
/// the sum of per-source rounded counts.
pub fn mix_modalities_stratified(samples: &[Sample], speech_fraction: f64, seed: u64) -> Result<MixPlan, DataError> {
    check_fraction(speech_fraction)?;
    unique_ids(samples)?;
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.source.as_str()).or_default().push(s.id.as_str());
    }
    let mut assignment = BTreeMap::new();
    for ids in groups.values() {
        assign(ids, speech_fraction, seed, &mut assignment);
    }
    Ok(MixPlan {
        speech_fraction,
        seed,
        stratified_by_source: true,
        assignment,
    })
}

/// Set each sample's modality from the plan. Samples assigned speech must
/// already carry audio.
pub fn apply_plan(samples: &[Sample], plan: &MixPlan) -> Result<Vec<Sample>, DataError> {
    let mut missing = Vec::new();
    let out = samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if let Some(m) = plan.assignment.get(&s.id) {
                s.modality = *m;
            }
            if s.modality.has_audio() && s.audio_path.is_none() {
                missing.push(s.id.clone());
            }
            s
        })
        .collect();
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(DataError::MissingAudio(missing))
    }
}
