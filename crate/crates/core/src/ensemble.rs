//! Combining systems and turning OK-probabilities into tags and error spans.

use serde::{Deserialize, Serialize};

use crate::corpus::{ErrorSpan, Severity, Tag, TokenizedText, WordTags};
use crate::error::{QeError, Result};
use crate::metrics::{mcc, span_f1, SpanMatch};
use crate::toy_qe::Prediction;

/// Per-system z-scores (population std) averaged per sample.
/// A system with zero variance contributes 0 everywhere.
pub fn zscore_ensemble(systems: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = systems.first() else {
        return Err(QeError::EmptyInput("no systems to ensemble"));
    };
    let n = first.len();
    if let Some(bad) = systems.iter().find(|s| s.len() != n) {
        return Err(QeError::Misaligned(format!("system with {} scores vs {n}", bad.len())));
    }
    let mut combined = vec![0.0; n];
    for scores in systems {
        let mean = scores.iter().sum::<f64>() / n as f64;
        let var = scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std > 0.0 {
            for (c, x) in combined.iter_mut().zip(scores) {
                *c += (x - mean) / std;
            }
        }
    }
    let k = systems.len() as f64;
    combined.iter_mut().for_each(|c| *c /= k);
    Ok(combined)
}

/// Element-wise mean of one sample's OK-probabilities across systems.
pub fn average_ok_probs(systems: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = systems.first() else {
        return Err(QeError::EmptyInput("no systems to average"));
    };
    let n = first.len();
    if let Some(bad) = systems.iter().find(|s| s.len() != n) {
        return Err(QeError::Misaligned(format!("{} vs {n} token probabilities", bad.len())));
    }
    let k = systems.len() as f64;
    Ok((0..n).map(|i| systems.iter().map(|s| s[i]).sum::<f64>() / k).collect())
}

/// Ensembles whole prediction sets that cover the same ids in the same order.
pub fn ensemble_predictions(systems: &[Vec<Prediction>]) -> Result<Vec<Prediction>> {
    let Some(first) = systems.first() else {
        return Err(QeError::EmptyInput("no systems to ensemble"));
    };
    for sys in systems {
        if sys.len() != first.len() {
            return Err(QeError::Misaligned(format!("{} vs {} predictions", sys.len(), first.len())));
        }
        for (a, b) in sys.iter().zip(first) {
            if a.id != b.id {
                return Err(QeError::Misaligned(format!("id {} vs {}", a.id, b.id)));
            }
        }
    }
    let scores: Vec<Vec<f64>> = systems.iter().map(|s| s.iter().map(|p| p.score).collect()).collect();
    let combined = zscore_ensemble(&scores)?;
    first
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let per_sys: Vec<&[f64]> = systems.iter().map(|s| s[i].ok_probs.as_slice()).collect();
            let ok_probs = average_ok_probs(&per_sys).map_err(|e| QeError::validation(&p.id, e.to_string()))?;
            Ok(Prediction { id: p.id.clone(), score: combined[i], ok_probs })
        })
        .collect()
}

/// OK iff `p > epsilon_bad`.
pub fn tag_by_threshold(ok_probs: &[f64], epsilon_bad: f64) -> WordTags {
    WordTags(ok_probs.iter().map(|&p| if p > epsilon_bad { Tag::Ok } else { Tag::Bad }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub bad: f64,
    pub minor: f64,
    pub major: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { bad: 0.5, minor: 0.5, major: 0.25 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for v in [self.bad, self.minor, self.major] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QeError::InvalidValue(format!("threshold {v} outside [0,1]")));
            }
        }
        check_order(self.minor, self.major)
    }
}

fn check_order(minor: f64, major: f64) -> Result<()> {
    if major > minor {
        return Err(QeError::InvalidThresholds { minor, major });
    }
    Ok(())
}

/// `None` for OK, otherwise the predicted severity (never Critical).
pub fn fine_tag(ok_probs: &[f64], epsilon_minor: f64, epsilon_major: f64) -> Result<Vec<Option<Severity>>> {
    check_order(epsilon_minor, epsilon_major)?;
    Ok(ok_probs
        .iter()
        .map(|&p| {
            if p > epsilon_minor {
                None
            } else if p > epsilon_major {
                Some(Severity::Minor)
            } else {
                Some(Severity::Major)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeRule {
    #[default]
    Worst,
    /// Most frequent member severity; ties go to the worse one.
    Majority,
}

impl std::str::FromStr for MergeRule {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst" => Ok(MergeRule::Worst),
            "majority" => Ok(MergeRule::Majority),
            other => Err(QeError::InvalidValue(format!("unknown merge rule {other:?}"))),
        }
    }
}

fn merge_severity(members: &[Severity], rule: MergeRule) -> Severity {
    match rule {
        MergeRule::Worst => *members.iter().max().expect("non-empty run"),
        MergeRule::Majority => {
            let mut counts = [0usize; 3];
            for s in members {
                counts[s.index()] += 1;
            }
            // max_by_key keeps the last maximum, so ties go to the worse severity
            *Severity::ALL.iter().max_by_key(|s| counts[s.index()]).expect("three severities")
        }
    }
}

/// Maximal runs of non-OK tokens become one span each.
pub fn assemble_spans(
    fine: &[Option<Severity>],
    translation: &TokenizedText,
    rule: MergeRule,
) -> Result<Vec<ErrorSpan>> {
    if fine.len() != translation.len() {
        return Err(QeError::Misaligned(format!("{} tags for {} tokens", fine.len(), translation.len())));
    }
    let offsets = translation.offsets();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < fine.len() {
        if fine[i].is_none() {
            i += 1;
            continue;
        }
        let start = i;
        let mut members = Vec::new();
        while let Some(Some(sev)) = fine.get(i) {
            members.push(*sev);
            i += 1;
        }
        spans.push(ErrorSpan::new(offsets[start].0, offsets[i - 1].1, merge_severity(&members, rule)));
    }
    Ok(spans)
}

/// `[0, 1]` sampled every `step`, endpoints included.
pub fn grid_points(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(QeError::InvalidValue(format!("grid step {step} must be in (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| ((i as f64 * step) * 1e9).round() / 1e9).filter(|v| *v <= 1.0).collect())
}

/// Dev-set material for threshold tuning.
pub struct DevSet<'a> {
    pub ok_probs: &'a [Vec<f64>],
    pub translations: &'a [TokenizedText],
    pub gold_tags: &'a [WordTags],
    pub gold_spans: &'a [Vec<ErrorSpan>],
}

impl DevSet<'_> {
    fn check(&self) -> Result<()> {
        let n = self.ok_probs.len();
        if n == 0 {
            return Err(QeError::EmptyInput("empty dev set"));
        }
        if self.translations.len() != n || self.gold_tags.len() != n || self.gold_spans.len() != n {
            return Err(QeError::Misaligned("dev set fields have different lengths".into()));
        }
        Ok(())
    }
}

/// ε_BAD maximizing corpus MCC; the smallest value wins ties.
pub fn tune_bad_threshold(dev: &DevSet<'_>, points: &[f64]) -> Result<(f64, f64)> {
    dev.check()?;
    let mut best: Option<(f64, f64)> = None;
    for &eps in points {
        let pred: Vec<WordTags> = dev.ok_probs.iter().map(|p| tag_by_threshold(p, eps)).collect();
        let score = mcc(&pred, dev.gold_tags)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((eps, score));
        }
    }
    best.ok_or(QeError::EmptyInput("empty threshold grid"))
}

/// (ε_minor, ε_major) maximizing span F1 subject to ε_major ≤ ε_minor;
/// ties go to the smaller ε_minor, then the smaller ε_major.
pub fn tune_severity_thresholds(
    dev: &DevSet<'_>,
    points: &[f64],
    rule: MergeRule,
    mode: SpanMatch,
) -> Result<(f64, f64, f64)> {
    dev.check()?;
    let mut best: Option<(f64, f64, f64)> = None;
    for &minor in points {
        for &major in points.iter().filter(|&&m| m <= minor) {
            let pred = dev
                .ok_probs
                .iter()
                .zip(dev.translations)
                .map(|(p, t)| assemble_spans(&fine_tag(p, minor, major)?, t, rule))
                .collect::<Result<Vec<_>>>()?;
            let score = span_f1(&pred, dev.gold_spans, mode)?;
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((minor, major, score));
            }
        }
    }
    best.ok_or(QeError::EmptyInput("empty threshold grid"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedThresholds {
    pub thresholds: Thresholds,
    pub mcc: f64,
    pub span_f1: f64,
}

pub fn grid_search_thresholds(
    dev: &DevSet<'_>,
    step: f64,
    rule: MergeRule,
    mode: SpanMatch,
) -> Result<TunedThresholds> {
    let points = grid_points(step)?;
    let (bad, mcc) = tune_bad_threshold(dev, &points)?;
    let (minor, major, f1) = tune_severity_thresholds(dev, &points, rule, mode)?;
    Ok(TunedThresholds { thresholds: Thresholds { bad, minor, major }, mcc, span_f1: f1 })
}
