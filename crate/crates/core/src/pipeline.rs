//! One-record pseudo-data generation: corrupt a clean reference, then fill the masks.

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, ParallelPair};
use crate::corruptor::{corrupt, EditProbs, MaskedTranslation};
use crate::error::{QeError, Result};
use crate::fixer::{fill_masks, FillMode, FillOutcome, Sampler, SeverityKMap};
use crate::rng::record_rng;
use crate::stats::CorruptionStats;

pub const CORRUPT_STAGE: &str = "corrupt";
pub const FIX_STAGE: &str = "fix";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoConfig {
    pub stats: CorruptionStats,
    pub edits: EditProbs,
    pub kmap: SeverityKMap,
    pub mode: FillMode,
    pub seed: u64,
}

pub fn corrupt_pair(
    pair: &ParallelPair,
    stats: &CorruptionStats,
    edits: EditProbs,
    seed: u64,
) -> Result<MaskedTranslation> {
    let reference = tokenize(&pair.target);
    let mut rng = record_rng(seed, CORRUPT_STAGE, &pair.id);
    corrupt(&reference, stats, edits, &mut rng)
        .map(|(_, masked)| masked)
        .map_err(|e| QeError::validation(&pair.id, e.to_string()))
}

pub fn fix_masked<S: Sampler + ?Sized>(
    id: &str,
    source: &str,
    masked: &MaskedTranslation,
    sampler: &mut S,
    kmap: &SeverityKMap,
    mode: FillMode,
    seed: u64,
) -> Result<FillOutcome> {
    let mut rng = record_rng(seed, FIX_STAGE, id);
    fill_masks(id, source, masked, sampler, kmap, mode, &mut rng)
}

pub fn pseudo_sample<S: Sampler + ?Sized>(
    pair: &ParallelPair,
    config: &PseudoConfig,
    sampler: &mut S,
) -> Result<FillOutcome> {
    let masked = corrupt_pair(pair, &config.stats, config.edits, config.seed)?;
    fix_masked(&pair.id, &pair.source, &masked, sampler, &config.kmap, config.mode, config.seed)
}
