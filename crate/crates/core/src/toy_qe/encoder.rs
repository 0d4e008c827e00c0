//! Fixed hashed-feature encoder.
//!
//! Every feature string maps to a pseudo-random unit vector. A target word is
//! the mean of the trigram vectors of `#word#`, plus one vector per neighbour
//! in the context window (tagged with its offset), plus the mean of the source
//! word vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, QeSample};
use crate::error::{QeError, Result};
use crate::rng::{seeded, stable_hash};

pub const PAD_LEFT: &str = "<s>";
pub const PAD_RIGHT: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub window: usize,
    pub hash_seed: u64,
    pub char_trigrams: bool,
    /// Key neighbour features by the centre word as well, so that word pairs
    /// get their own vectors.
    pub conjoin_neighbors: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { dim: 128, window: 1, hash_seed: 0, char_trigrams: true, conjoin_neighbors: false }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(QeError::InvalidValue(format!("encoder dim {} < 2", self.dim)));
        }
        Ok(())
    }
}

/// Row-major `n × d` word representations.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn mean_row(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Unit vector for one feature string.
pub fn feature_vector(config: &EncoderConfig, feature: &str) -> Vec<f64> {
    let mut rng = seeded(stable_hash(config.hash_seed, feature.as_bytes()));
    let mut v: Vec<f64> = (0..config.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v[0] = 1.0;
    }
    v
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

/// Feature names making up one word's own vector.
pub fn word_features(config: &EncoderConfig, word: &str) -> Vec<String> {
    if !config.char_trigrams {
        return vec![format!("w:{word}")];
    }
    let padded: Vec<char> = format!("#{word}#").chars().collect();
    padded.windows(3).map(|w| format!("c3:{}", w.iter().collect::<String>())).collect()
}

fn word_vector(config: &EncoderConfig, word: &str) -> Vec<f64> {
    let feats = word_features(config, word);
    let mut v = vec![0.0; config.dim];
    for f in &feats {
        add_scaled(&mut v, &feature_vector(config, f), 1.0 / feats.len() as f64);
    }
    v
}

pub fn encode_tokens(config: &EncoderConfig, source: &str, tokens: &[String]) -> Result<Encoded> {
    config.validate()?;
    if tokens.is_empty() {
        return Err(QeError::EmptyTranslation);
    }
    let d = config.dim;
    let src = tokenize(source);
    let mut src_mean = vec![0.0; d];
    for tok in src.tokens() {
        add_scaled(&mut src_mean, &feature_vector(config, &format!("s:{tok}")), 1.0 / src.len() as f64);
    }
    let n = tokens.len();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut v = word_vector(config, &tokens[i]);
        for o in 1..=config.window {
            let left = if i >= o { tokens[i - o].as_str() } else { PAD_LEFT };
            let right = tokens.get(i + o).map_or(PAD_RIGHT, |t| t.as_str());
            let (lf, rf) = if config.conjoin_neighbors {
                let w = &tokens[i];
                (format!("n-{o}:{left}|{w}"), format!("n+{o}:{w}|{right}"))
            } else {
                (format!("n-{o}:{left}"), format!("n+{o}:{right}"))
            };
            add_scaled(&mut v, &feature_vector(config, &lf), 1.0);
            add_scaled(&mut v, &feature_vector(config, &rf), 1.0);
        }
        add_scaled(&mut v, &src_mean, 1.0);
        data.extend(v);
    }
    Ok(Encoded { dim: d, data })
}

pub fn encode(sample: &QeSample, config: &EncoderConfig) -> Result<Encoded> {
    encode_tokens(config, &sample.source, sample.translation.tokens())
        .map_err(|e| QeError::validation(&sample.id, e.to_string()))
}
