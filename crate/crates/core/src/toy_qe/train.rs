//! Mini-batch training with early stopping, and checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encoder::{encode, Encoded, EncoderConfig};
use super::model::{forward, loss_qe, Activation, LossItem, LossWeights, ModelParams};
use super::Prediction;
use crate::corpus::{QeSample, Tag, WordTags};
use crate::error::{QeError, Result};
use crate::metrics::{mcc, spearman};
use crate::rng::{seeded, stable_hash};

/// An encoded, fully annotated record.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub h: Encoded,
    pub tags: Vec<Tag>,
    pub score: f64,
}

pub fn prepare(samples: &[QeSample], encoder: &EncoderConfig) -> Result<Vec<Example>> {
    samples.iter().map(|s| prepare_one(s, encoder)).collect()
}

pub fn prepare_one(sample: &QeSample, encoder: &EncoderConfig) -> Result<Example> {
    let (Some(tags), Some(score)) = (&sample.tags, sample.mqm_score) else {
        return Err(QeError::validation(&sample.id, "training record needs tags and score"));
    };
    if tags.len() != sample.translation.len() {
        return Err(QeError::validation(&sample.id, "tag count differs from token count"));
    }
    Ok(Example { id: sample.id.clone(), h: encode(sample, encoder)?, tags: tags.0.clone(), score })
}

/// Min-max scaling of gold scores onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn fit(scores: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut it = scores.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x)));
        Some(Normalization { min, max })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Updates between validation runs.
    pub eval_interval: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            alpha: w.alpha,
            beta: w.beta,
            margin: w.margin,
            learning_rate: 0.05,
            batch_size: 16,
            eval_interval: 50,
            patience: 10,
            max_epochs: 30,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, margin: self.margin }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QeError::InvalidValue(m));
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.margin >= 0.0) {
            return bad(format!(
                "alpha, beta and margin must be >= 0 (got {}, {}, {})",
                self.alpha, self.beta, self.margin
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.patience < 1 || self.batch_size < 1 || self.eval_interval < 1 || self.max_epochs < 1 {
            return bad("patience, batch size, eval interval and max epochs must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub update: usize,
    pub epoch: usize,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
    /// `None` when the correlation is undefined.
    pub valid_spearman: Option<f64>,
    pub valid_mcc: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub normalization: Option<Normalization>,
    pub history: Vec<EvalRecord>,
    pub best_update: usize,
}

pub fn predict_example(h: &Encoded, id: &str, params: &ModelParams) -> Prediction {
    let (score, ok_probs) = forward(h, params);
    Prediction { id: id.to_string(), score, ok_probs }
}

/// Validation Spearman (undefined maps to -inf) and MCC at p_OK threshold 0.5.
pub fn evaluate(params: &ModelParams, valid: &[Example]) -> Result<(f64, f64)> {
    let preds: Vec<Prediction> = valid.iter().map(|e| predict_example(&e.h, &e.id, params)).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let gold: Vec<f64> = valid.iter().map(|e| e.score).collect();
    let rho = spearman(&scores, &gold).unwrap_or(f64::NEG_INFINITY);
    let pred_tags: Vec<WordTags> = preds.iter().map(|p| crate::ensemble::tag_by_threshold(&p.ok_probs, 0.5)).collect();
    let gold_tags: Vec<WordTags> = valid.iter().map(|e| WordTags(e.tags.clone())).collect();
    Ok((rho, mcc(&pred_tags, &gold_tags)?))
}

/// Trains the heads starting from `init`. Fine-tuning is the same call with
/// parameters taken from a checkpoint.
pub fn train(train: &[Example], valid: &[Example], config: &TrainConfig, init: ModelParams) -> Result<TrainOutcome> {
    config.validate()?;
    init.validate()?;
    if train.is_empty() {
        return Err(QeError::EmptyInput("empty training set"));
    }
    if valid.is_empty() {
        return Err(QeError::EmptyInput("empty validation set"));
    }
    if let Some(e) = train.iter().chain(valid).find(|e| e.h.dim != init.heads.dim()) {
        return Err(QeError::validation(&e.id, "encoding width differs from model width"));
    }
    let normalization = match init.sigma {
        Activation::Sigmoid => Normalization::fit(train.iter().map(|e| e.score)),
        Activation::None => None,
    };
    let targets: Vec<f64> = train.iter().map(|e| normalization.map_or(e.score, |n| n.normalize(e.score))).collect();
    let weights = config.weights();
    let mut shuffle_rng = seeded(stable_hash(config.seed, b"shuffle"));
    let mut dropout_rng = seeded(stable_hash(config.seed, b"dropout"));

    let mut params = init;
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut update = 0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut checkpoint =
        |params: &ModelParams, update: usize, epoch: usize, loss: f64, history: &mut Vec<EvalRecord>| -> Result<bool> {
            let (rho, m) = evaluate(params, valid)?;
            let improved = best.as_ref().is_none_or(|(b, _, _)| rho > *b);
            if improved {
                best = Some((rho, params.clone(), update));
                stale = 0;
            } else {
                stale += 1;
            }
            history.push(EvalRecord {
                update,
                epoch,
                train_loss: loss,
                valid_spearman: rho.is_finite().then_some(rho),
                valid_mcc: m,
                improved,
            });
            Ok(stale >= config.patience)
        };

    'outer: for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<LossItem> =
                chunk.iter().map(|&i| LossItem { h: &train[i].h, tags: &train[i].tags, target: targets[i] }).collect();
            let (loss, grad) = loss_qe(&params, &batch, &weights, Some(&mut dropout_rng)).map_err(|e| match e {
                QeError::Divergence(m) => QeError::Divergence(format!("update {update}, epoch {epoch}: {m}")),
                other => other,
            })?;
            params.heads.axpy(-config.learning_rate, &grad);
            if !params.heads.is_finite() {
                return Err(QeError::Divergence(format!("non-finite parameters after update {update}")));
            }
            update += 1;
            loss_sum += loss.total;
            loss_count += 1;
            if update % config.eval_interval == 0 {
                let mean = loss_sum / loss_count as f64;
                loss_sum = 0.0;
                loss_count = 0;
                if checkpoint(&params, update, epoch, mean, &mut history)? {
                    break 'outer;
                }
            }
        }
    }
    if history.is_empty() {
        let mean = loss_sum / loss_count.max(1) as f64;
        checkpoint(&params, update, config.max_epochs - 1, mean, &mut history)?;
    }
    let (_, params, best_update) = best.expect("at least one evaluation");
    Ok(TrainOutcome { params, normalization, history, best_update })
}

pub const CHECKPOINT_FORMAT: &str = "qe-toy-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderConfig,
    pub params: ModelParams,
    pub normalization: Option<Normalization>,
}

impl Checkpoint {
    pub fn new(encoder: EncoderConfig, params: ModelParams, normalization: Option<Normalization>) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, encoder, params, normalization }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(QeError::InvalidValue(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        c.encoder.validate()?;
        c.params.validate()?;
        if c.params.heads.dim() != c.encoder.dim {
            return Err(QeError::InvalidValue("checkpoint encoder and head widths differ".into()));
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| QeError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn predict(&self, sample: &QeSample) -> Result<Prediction> {
        let h = encode(sample, &self.encoder)?;
        Ok(predict_example(&h, &sample.id, &self.params))
    }
}
