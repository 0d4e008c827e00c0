//! Word n-gram language model with stupid-backoff scoring.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QeError, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const BACKOFF_FACTOR: f64 = 0.4;

const FORMAT_TAG: &str = "qe-ngram-lm";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    /// `counts[k - 1]` maps space-joined k-grams to their counts.
    counts: Vec<HashMap<String, u64>>,
    /// `context_totals[k - 1]` maps a k-gram context to the number of (k+1)-grams extending it.
    context_totals: Vec<HashMap<String, u64>>,
    unigram_total: u64,
    vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LmFile {
    format: String,
    version: u32,
    order: usize,
    counts: Vec<BTreeMap<String, u64>>,
}

fn join(parts: &[&str]) -> String {
    parts.join(" ")
}

pub fn train_ngram_lm<S: AsRef<str>>(corpus: &[Vec<S>], order: usize) -> Result<NgramLm> {
    if corpus.is_empty() {
        return Err(QeError::EmptyInput("cannot train a language model on an empty corpus"));
    }
    if order == 0 {
        return Err(QeError::InvalidValue("n-gram order must be at least 1".into()));
    }
    let mut counts: Vec<HashMap<String, u64>> = vec![HashMap::new(); order];
    for sentence in corpus {
        let mut padded: Vec<&str> = vec![BOS; order - 1];
        padded.extend(sentence.iter().map(|s| s.as_ref()));
        padded.push(EOS);
        for k in 1..=order {
            for (i, gram) in padded.windows(k).enumerate() {
                // n-grams made only of padding carry no information
                if i + k < order {
                    continue;
                }
                if k == 1 && gram[0] == BOS {
                    continue;
                }
                *counts[k - 1].entry(join(gram)).or_default() += 1;
            }
        }
    }
    Ok(NgramLm::from_counts(order, counts))
}

impl NgramLm {
    fn from_counts(order: usize, counts: Vec<HashMap<String, u64>>) -> Self {
        let mut context_totals: Vec<HashMap<String, u64>> = vec![HashMap::new(); order];
        for k in 2..=order {
            for (gram, &c) in &counts[k - 1] {
                let ctx = gram.rsplit_once(' ').map_or("", |(head, _)| head);
                *context_totals[k - 2].entry(ctx.to_string()).or_default() += c;
            }
        }
        let unigram_total = counts[0].iter().filter(|(w, _)| w.as_str() != EOS).map(|(_, c)| c).sum();
        let mut vocab: Vec<String> =
            counts[0].keys().filter(|w| w.as_str() != EOS && w.as_str() != BOS).cloned().collect();
        vocab.sort();
        NgramLm { order, counts, context_totals, unigram_total, vocab }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Sorted candidate vocabulary (boundary symbols excluded).
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn count(&self, gram: &[&str]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.counts[gram.len() - 1].get(&join(gram)).copied().unwrap_or(0)
    }

    fn unigram(&self, word: &str) -> f64 {
        if self.unigram_total == 0 {
            return 0.0;
        }
        self.counts[0].get(word).copied().unwrap_or(0) as f64 / self.unigram_total as f64
    }

    /// The last `order - 1` tokens before `position`, left-padded with `<s>`.
    pub fn history<'a>(&self, tokens: &'a [String], position: usize) -> Vec<&'a str> {
        let want = self.order - 1;
        let start = position.saturating_sub(want);
        let mut ctx: Vec<&str> = vec![BOS; want.saturating_sub(position)];
        ctx.extend(tokens[start..position].iter().map(String::as_str));
        ctx
    }

    /// Stupid-backoff score of `word` after `context` (unnormalized).
    pub fn score(&self, context: &[&str], word: &str) -> f64 {
        let keep = context.len().min(self.order - 1);
        let mut ctx = &context[context.len() - keep..];
        let mut factor = 1.0;
        let mut key = Vec::with_capacity(ctx.len() + 1);
        while !ctx.is_empty() {
            key.clear();
            key.extend_from_slice(ctx);
            key.push(word);
            let num = self.counts[ctx.len()].get(&join(&key)).copied().unwrap_or(0);
            if num > 0 {
                let den = self.context_totals[ctx.len() - 1].get(&join(ctx)).copied().unwrap_or(0);
                return factor * num as f64 / den as f64;
            }
            factor *= BACKOFF_FACTOR;
            ctx = &ctx[1..];
        }
        factor * self.unigram(word)
    }

    /// Backoff scores over the vocabulary, normalized to sum to one.
    pub fn distribution(&self, context: &[&str]) -> Vec<(String, f64)> {
        let scores: Vec<f64> = self.vocab.iter().map(|w| self.score(context, w)).collect();
        let total: f64 = scores.iter().sum();
        self.vocab.iter().cloned().zip(scores).map(|(w, s)| (w, if total > 0.0 { s / total } else { 0.0 })).collect()
    }

    /// The `k` most probable words after `context`; ties broken by token order.
    pub fn top_k(&self, context: &[&str], k: usize) -> Vec<(String, f64)> {
        let mut dist: Vec<(String, f64)> = self.distribution(context).into_iter().filter(|(_, p)| *p > 0.0).collect();
        dist.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        dist.truncate(k);
        dist
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LmFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            order: self.order,
            counts: self.counts.iter().map(|m| m.iter().map(|(k, v)| (k.clone(), *v)).collect()).collect(),
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LmFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(QeError::InvalidValue(format!(
                "unsupported language model file {} v{}",
                file.format, file.version
            )));
        }
        if file.order == 0 || file.counts.len() != file.order {
            return Err(QeError::InvalidValue("inconsistent n-gram order".into()));
        }
        let counts = file.counts.into_iter().map(|m| m.into_iter().collect()).collect();
        Ok(NgramLm::from_counts(file.order, counts))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| QeError::io(path, e))?;
        NgramLm::from_json(&text).map_err(|e| QeError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })
    }
}
