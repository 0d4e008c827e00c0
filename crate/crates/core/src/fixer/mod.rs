//! Mask filling: every masked position receives a token drawn uniformly from
//! the sampler's top-k candidates, never the reference token it replaced.
//! Graver severities use larger k, so they reach less probable tokens.

mod external;
mod ngram;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use external::{ExternalSampler, DEFAULT_TIMEOUT};
pub use ngram::{train_ngram_lm, NgramLm, BACKOFF_FACTOR, BOS, EOS};

use crate::corpus::{ErrorSpan, QeSample, Severity, TokenizedText, WordTags};
use crate::corruptor::{MaskedTranslation, MASK};
use crate::error::{QeError, Result};

/// Top-k size per severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityKMap {
    pub minor: usize,
    pub major: usize,
    pub critical: usize,
}

impl Default for SeverityKMap {
    fn default() -> Self {
        SeverityKMap { minor: 2, major: 10, critical: 100 }
    }
}

impl SeverityKMap {
    pub fn new(minor: usize, major: usize, critical: usize) -> Result<Self> {
        let map = SeverityKMap { minor, major, critical };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.minor < 2 || self.major < 2 || self.critical < 2 {
            return Err(QeError::InvalidValue(format!(
                "top-k sizes must be at least 2, got {}/{}/{}",
                self.minor, self.major, self.critical
            )));
        }
        Ok(())
    }

    pub fn k(&self, severity: Severity) -> usize {
        match severity {
            Severity::Minor => self.minor,
            Severity::Major => self.major,
            Severity::Critical => self.critical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FillMode {
    /// Masks filled in order; earlier fills are visible to later requests.
    #[serde(rename = "ltr")]
    LeftToRight,
    /// Every mask is predicted from the original masked context.
    #[serde(rename = "parallel")]
    Parallel,
}

impl std::str::FromStr for FillMode {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ltr" | "left-to-right" => Ok(FillMode::LeftToRight),
            "parallel" => Ok(FillMode::Parallel),
            other => Err(QeError::InvalidValue(format!("unknown fill mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FillRequest {
    pub source: String,
    pub context: Vec<String>,
    pub target_position: usize,
    pub mode: FillMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub tokens: Vec<String>,
    pub probs: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.tokens.len() != self.probs.len() {
            return Err(QeError::SamplerProtocol(format!(
                "{} tokens but {} probabilities",
                self.tokens.len(),
                self.probs.len()
            )));
        }
        if self.tokens.len() > k {
            return Err(QeError::SamplerProtocol(format!("{} candidates returned for k={k}", self.tokens.len())));
        }
        if self.probs.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(QeError::SamplerProtocol("probabilities must be positive".into()));
        }
        if self.probs.windows(2).any(|w| w[1] > w[0]) {
            return Err(QeError::SamplerProtocol("probabilities must be descending".into()));
        }
        for tok in &self.tokens {
            if tok.is_empty() || tok == MASK || tok.chars().any(char::is_whitespace) {
                return Err(QeError::SamplerProtocol(format!("unusable token {tok:?}")));
            }
        }
        Ok(())
    }
}

/// Source of candidate tokens for masked positions.
pub trait Sampler {
    fn top_k(&mut self, request: &FillRequest, k: usize) -> Result<CandidateSet>;

    /// Full vocabulary for the fallback draw, when the sampler knows it.
    fn vocabulary(&self) -> Option<&[String]> {
        None
    }
}

impl Sampler for &NgramLm {
    fn top_k(&mut self, request: &FillRequest, k: usize) -> Result<CandidateSet> {
        if k == 0 {
            return Err(QeError::InvalidValue("k must be at least 1".into()));
        }
        let history = self.history(&request.context, request.target_position);
        let (tokens, probs) = NgramLm::top_k(self, &history, k).into_iter().unzip();
        Ok(CandidateSet { tokens, probs })
    }

    fn vocabulary(&self) -> Option<&[String]> {
        Some(self.vocab())
    }
}

/// How one mask was filled.
#[derive(Debug, Clone, PartialEq)]
pub struct FillTrace {
    pub position: usize,
    pub severity: Severity,
    pub k: usize,
    /// Candidates returned by the sampler, before removing the reference token.
    pub pool_size: usize,
    pub token: String,
    /// Index of `token` in the candidate list; `None` if the vocabulary fallback was used.
    pub candidate_rank: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FillOutcome {
    pub sample: QeSample,
    pub trace: Vec<FillTrace>,
}

fn choose<R: Rng + ?Sized>(
    candidates: &CandidateSet,
    excluded: Option<&str>,
    vocabulary: Option<&[String]>,
    rng: &mut R,
) -> Result<(String, Option<usize>)> {
    let pool: Vec<usize> = (0..candidates.len()).filter(|&i| Some(candidates.tokens[i].as_str()) != excluded).collect();
    if let Some(&i) = pool.choose(rng) {
        return Ok((candidates.tokens[i].clone(), Some(i)));
    }
    let vocab =
        vocabulary.ok_or_else(|| QeError::SamplerProtocol("no candidate other than the reference token".into()))?;
    if vocab.len() <= 1 {
        return Err(QeError::InvalidValue("vocabulary of size 1 cannot produce a wrong token".into()));
    }
    let rest: Vec<&String> = vocab.iter().filter(|w| Some(w.as_str()) != excluded).collect();
    let w = rest
        .choose(rng)
        .ok_or_else(|| QeError::InvalidValue("no vocabulary token differs from the reference".into()))?;
    Ok(((*w).clone(), None))
}

/// Token-aligned error spans for the mask groups, converted to character offsets.
/// Groups whose token ranges overlap are merged, keeping the worse severity.
pub fn spans_for_groups(masked: &MaskedTranslation, text: &TokenizedText) -> Vec<ErrorSpan> {
    let mut ranges: Vec<(usize, usize, Severity)> =
        masked.groups.iter().filter_map(|g| g.token_range().map(|(lo, hi)| (lo, hi, g.severity))).collect();
    ranges.sort();
    let mut merged: Vec<(usize, usize, Severity)> = Vec::new();
    for (lo, hi, sev) in ranges {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => {
                last.1 = last.1.max(hi);
                last.2 = last.2.max(sev);
            }
            _ => merged.push((lo, hi, sev)),
        }
    }
    let offsets = text.offsets();
    merged.into_iter().map(|(lo, hi, sev)| ErrorSpan::new(offsets[lo].0, offsets[hi].1, sev)).collect()
}

/// Fills every mask in `masked` and returns the finished pseudo QE sample.
#[allow(clippy::too_many_arguments)]
pub fn fill_masks<S, R>(
    id: &str,
    source: &str,
    masked: &MaskedTranslation,
    sampler: &mut S,
    kmap: &SeverityKMap,
    mode: FillMode,
    rng: &mut R,
) -> Result<FillOutcome>
where
    S: Sampler + ?Sized,
    R: Rng + ?Sized,
{
    masked.validate().map_err(|e| QeError::validation(id, e.to_string()))?;
    let mut severity_at: BTreeMap<usize, Severity> = BTreeMap::new();
    for g in &masked.groups {
        for &p in &g.mask_positions {
            severity_at.insert(p, g.severity);
        }
    }
    if let Some(p) = masked.tokens.iter().enumerate().position(|(i, t)| t == MASK && !severity_at.contains_key(&i)) {
        return Err(QeError::validation(id, format!("mask at {p} belongs to no span")));
    }

    let mut tokens = masked.tokens.clone();
    let request = |context: &[String], pos: usize| FillRequest {
        source: source.to_string(),
        context: context.to_vec(),
        target_position: pos,
        mode,
    };

    let mut trace = Vec::with_capacity(severity_at.len());
    let positions: Vec<(usize, Severity)> = severity_at.into_iter().collect();
    let parallel_sets = if mode == FillMode::Parallel {
        let mut sets = Vec::with_capacity(positions.len());
        for &(pos, sev) in &positions {
            let k = kmap.k(sev);
            let set = sampler.top_k(&request(&masked.tokens, pos), k)?;
            set.validate(k)?;
            sets.push(set);
        }
        Some(sets)
    } else {
        None
    };

    for (i, &(pos, sev)) in positions.iter().enumerate() {
        let k = kmap.k(sev);
        let set = match &parallel_sets {
            Some(sets) => sets[i].clone(),
            None => {
                let set = sampler.top_k(&request(&tokens, pos), k)?;
                set.validate(k)?;
                set
            }
        };
        let excluded = masked.replaced[pos].as_deref();
        let (token, candidate_rank) = choose(&set, excluded, sampler.vocabulary(), rng).map_err(|e| match e {
            QeError::InvalidValue(m) => QeError::validation(id, m),
            other => other,
        })?;
        tokens[pos] = token.clone();
        trace.push(FillTrace { position: pos, severity: sev, k, pool_size: set.len(), token, candidate_rank });
    }

    let translation = TokenizedText::from_tokens(&tokens).map_err(|e| QeError::validation(id, e.to_string()))?;
    let spans = spans_for_groups(masked, &translation);
    let sample = QeSample {
        id: id.to_string(),
        source: source.to_string(),
        translation,
        tags: Some(WordTags(masked.gold_tags.clone())),
        mqm_score: Some(masked.pseudo_mqm),
        spans: Some(spans),
    };
    sample.validate()?;
    Ok(FillOutcome { sample, trace })
}
