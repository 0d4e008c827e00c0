//! Small joint sentence/word QE model: a fixed hashed-feature encoder with a
//! trainable score head and tag head.

pub mod encoder;
pub mod model;
pub mod train;

use std::io::{BufRead, Write};
use std::path::Path;

pub use encoder::{encode, Encoded, EncoderConfig};
pub use model::{forward, loss_qe, loss_rank, Activation, Heads, LossItem, LossWeights, ModelParams};
pub use train::{prepare, train, Checkpoint, Example, Normalization, TrainConfig, TrainOutcome};

use crate::error::{QeError, Result};

/// Model output for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub score: f64,
    pub ok_probs: Vec<f64>,
}

impl Prediction {
    pub fn validate(&self, token_count: usize) -> Result<()> {
        if self.ok_probs.len() != token_count {
            return Err(QeError::validation(
                &self.id,
                format!("{} probabilities for {token_count} tokens", self.ok_probs.len()),
            ));
        }
        if self.ok_probs.iter().any(|p| !(0.0..=1.0).contains(p)) || !self.score.is_finite() {
            return Err(QeError::validation(&self.id, "probability outside [0,1] or non-finite score"));
        }
        Ok(())
    }
}

/// One line per record: `id<TAB>score<TAB>p1 p2 ...`.
pub fn write_predictions<W: Write>(preds: &[Prediction], mut out: W) -> Result<()> {
    for p in preds {
        let probs: Vec<String> = p.ok_probs.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}\t{}\t{}", p.id, p.score, probs.join(" "))?;
    }
    Ok(())
}

pub fn parse_predictions<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<Prediction>> {
    let mut preds = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| QeError::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| QeError::Parse { path: origin.to_path_buf(), line: i + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, score, probs] = fields[..] else {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        let score: f64 = score.parse().map_err(|_| err(format!("bad score {score:?}")))?;
        let ok_probs = probs
            .split_whitespace()
            .map(|p| p.parse::<f64>().map_err(|_| err(format!("bad probability {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if ok_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(err("probability outside [0,1]".into()));
        }
        preds.push(Prediction { id: id.to_string(), score, ok_probs });
    }
    Ok(preds)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| QeError::io(path, e))?;
    parse_predictions(std::io::BufReader::new(file), path)
}
