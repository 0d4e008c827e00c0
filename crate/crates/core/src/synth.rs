//! Toy bilingual corpora and a planted noise process standing in for
//! human-annotated MT errors.
//!
//! Target sentences come from a first-order Markov grammar over syllable-built
//! words; the source side is a word-for-word lexicon mapping. Planted errors
//! are filled with plausible successors of the preceding token, the kind of
//! fluent-but-wrong output a real MT system produces.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, ParallelPair, QeSample};
use crate::corruptor::{corrupt, EditProbs};
use crate::error::{QeError, Result};
use crate::fixer::{fill_masks, CandidateSet, FillMode, FillRequest, Sampler, SeverityKMap};
use crate::rng::{record_rng, seeded, QeRng};
use crate::stats::{CategoricalDist, CorruptionStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyLanguageConfig {
    pub vocab_size: usize,
    /// Outgoing transitions per word.
    pub successors: usize,
    /// Zipf exponent for word frequencies and transition weights.
    pub zipf: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ToyLanguageConfig {
    fn default() -> Self {
        ToyLanguageConfig { vocab_size: 200, successors: 4, zipf: 1.0, min_len: 6, max_len: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct ToyLanguage {
    pub config: ToyLanguageConfig,
    pub target_words: Vec<String>,
    pub source_words: Vec<String>,
    start: CategoricalDist<usize>,
    next: Vec<CategoricalDist<usize>>,
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| 1.0 / (r as f64).powf(s)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn make_words(n: usize, consonants: &[char], vowels: &[char], rng: &mut QeRng) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(n);
    while words.len() < n {
        let syllables = rng.gen_range(2..=3);
        let w: String =
            (0..syllables).flat_map(|_| [*consonants.choose(rng).unwrap(), *vowels.choose(rng).unwrap()]).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

impl ToyLanguage {
    pub fn new(config: ToyLanguageConfig, seed: u64) -> Result<Self> {
        if config.vocab_size < 2 || config.successors < 1 || config.successors > config.vocab_size {
            return Err(QeError::InvalidValue("toy language needs vocab >= 2 and 1 <= successors <= vocab".into()));
        }
        if config.min_len < 1 || config.min_len > config.max_len {
            return Err(QeError::InvalidValue("toy language needs 1 <= min_len <= max_len".into()));
        }
        let mut rng = seeded(seed);
        let v = config.vocab_size;
        let target_words = make_words(
            v,
            &"bdfgklmnprstvz".chars().collect::<Vec<_>>(),
            &"aeiou".chars().collect::<Vec<_>>(),
            &mut rng,
        );
        let source_words =
            make_words(v, &"chjqwxy".chars().collect::<Vec<_>>(), &"aeiouy".chars().collect::<Vec<_>>(), &mut rng);
        let unigram = CategoricalDist::new((0..v).collect(), zipf_weights(v, config.zipf))?;
        let trans_weights = zipf_weights(config.successors, config.zipf);
        let next = (0..v)
            .map(|_| {
                let mut succ: Vec<usize> = Vec::with_capacity(config.successors);
                while succ.len() < config.successors {
                    let w = unigram.sample(&mut rng);
                    if !succ.contains(&w) {
                        succ.push(w);
                    }
                }
                CategoricalDist::new(succ, trans_weights.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ToyLanguage { config, target_words, source_words, start: unigram, next })
    }

    /// Word indices of one target sentence.
    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let len = rng.gen_range(self.config.min_len..=self.config.max_len);
        let mut out = vec![self.start.sample(rng)];
        while out.len() < len {
            let prev = *out.last().unwrap();
            out.push(self.next[prev].sample(rng));
        }
        out
    }

    /// Successors of `word` in decreasing probability.
    pub fn successors(&self, word: usize) -> &[usize] {
        self.next[word].support()
    }

    pub fn render(&self, sentence: &[usize]) -> (String, String) {
        let tgt: Vec<&str> = sentence.iter().map(|&w| self.target_words[w].as_str()).collect();
        let src: Vec<&str> = sentence.iter().map(|&w| self.source_words[w].as_str()).collect();
        (src.join(" "), tgt.join(" "))
    }

    /// `n` pairs with ids `{prefix}{i}`; each pair has its own random stream.
    pub fn corpus(&self, n: usize, prefix: &str, seed: u64) -> Vec<ParallelPair> {
        (1..=n)
            .map(|i| {
                let id = format!("{prefix}{i}");
                let mut rng = record_rng(seed, "toy-corpus", &id);
                let (source, target) = self.render(&self.sentence(&mut rng));
                ParallelPair { id, source, target }
            })
            .collect()
    }

    fn index_of(&self, word: &str) -> Option<usize> {
        self.target_words.iter().position(|w| w == word)
    }
}

/// The true grammar as a fill sampler: candidates are the successors of the
/// preceding token, or sentence-initial words at position 0.
impl Sampler for &ToyLanguage {
    fn top_k(&mut self, request: &FillRequest, k: usize) -> Result<CandidateSet> {
        let prev =
            request.target_position.checked_sub(1).and_then(|p| request.context.get(p)).and_then(|w| self.index_of(w));
        let dist = match prev {
            Some(p) => &self.next[p],
            None => &self.start,
        };
        let (tokens, probs) =
            dist.support().iter().zip(dist.probs()).take(k).map(|(&w, &p)| (self.target_words[w].clone(), p)).unzip();
        Ok(CandidateSet { tokens, probs })
    }

    fn vocabulary(&self) -> Option<&[String]> {
        Some(&self.target_words)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub stats: CorruptionStats,
    pub edits: EditProbs,
    pub kmap: SeverityKMap,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            stats: CorruptionStats::synthetic_defaults(),
            edits: EditProbs::default(),
            kmap: SeverityKMap::default(),
        }
    }
}

/// Turns a clean pair into an annotated "real" QE sample with planted errors:
/// the corruptor picks the spans, the true grammar fills them left to right.
pub fn plant_noise<R: Rng + ?Sized>(
    lang: &ToyLanguage,
    pair: &ParallelPair,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<QeSample> {
    let reference = tokenize(&pair.target);
    let (_, masked) = corrupt(&reference, &noise.stats, noise.edits, rng)
        .map_err(|e| QeError::validation(&pair.id, e.to_string()))?;
    let outcome = fill_masks(&pair.id, &pair.source, &masked, &mut &*lang, &noise.kmap, FillMode::LeftToRight, rng)?;
    Ok(outcome.sample)
}

/// Annotated samples for every pair, each with its own random stream.
pub fn noisy_corpus(
    lang: &ToyLanguage,
    pairs: &[ParallelPair],
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<QeSample>> {
    pairs.iter().map(|p| plant_noise(lang, p, noise, &mut record_rng(seed, "plant-noise", &p.id))).collect()
}
