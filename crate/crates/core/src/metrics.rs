//! Sentence-, word- and span-level evaluation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{validate_spans, ErrorSpan, Severity, WordTags};
use crate::error::{QeError, Result};

/// Average ranks, 1-based; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(QeError::Misaligned(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(QeError::UndefinedCorrelation("fewer than two values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(QeError::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.iter().chain(gold).any(|v| v.is_nan()) {
        return Err(QeError::InvalidValue("NaN in correlation input".into()));
    }
    pearson(&average_ranks(pred), &average_ranks(gold))
}

/// Token confusion counts with BAD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_tags(pred: &[WordTags], gold: &[WordTags]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(QeError::Misaligned(format!("{} predicted vs {} gold sentences", pred.len(), gold.len())));
        }
        let mut c = ConfusionCounts::default();
        for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
            if p.len() != g.len() {
                return Err(QeError::Misaligned(format!(
                    "sentence {i}: {} predicted vs {} gold tags",
                    p.len(),
                    g.len()
                )));
            }
            for (pt, gt) in p.iter().zip(g.iter()) {
                match (pt.is_bad(), gt.is_bad()) {
                    (true, true) => c.tp += 1,
                    (false, false) => c.tn += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}

/// Corpus-level MCC pooled over all tokens.
pub fn mcc(pred: &[WordTags], gold: &[WordTags]) -> Result<f64> {
    Ok(ConfusionCounts::from_tags(pred, gold)?.mcc())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanMatch {
    /// Character credit only when severities agree.
    Strict,
    /// Half credit for a character whose severity disagrees.
    #[default]
    Lenient,
}

impl std::str::FromStr for SpanMatch {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(SpanMatch::Strict),
            "lenient" => Ok(SpanMatch::Lenient),
            other => Err(QeError::InvalidValue(format!("unknown span mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpanScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub credit: f64,
    pub pred_chars: u64,
    pub gold_chars: u64,
}

fn char_severities(spans: &[ErrorSpan]) -> Result<HashMap<usize, Severity>> {
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    validate_spans(&sorted, usize::MAX)?;
    let mut map = HashMap::new();
    for span in &sorted {
        for pos in span.start..span.end {
            map.insert(pos, span.severity);
        }
    }
    Ok(map)
}

/// Character-level span precision/recall/F1 pooled over samples.
pub fn span_scores(pred: &[Vec<ErrorSpan>], gold: &[Vec<ErrorSpan>], mode: SpanMatch) -> Result<SpanScore> {
    if pred.len() != gold.len() {
        return Err(QeError::Misaligned(format!("{} predicted vs {} gold samples", pred.len(), gold.len())));
    }
    let mut credit = 0.0;
    let (mut n_pred, mut n_gold) = (0u64, 0u64);
    for (p, g) in pred.iter().zip(gold) {
        let p = char_severities(p)?;
        let g = char_severities(g)?;
        n_pred += p.len() as u64;
        n_gold += g.len() as u64;
        for (pos, sev) in &p {
            match g.get(pos) {
                Some(gs) if gs == sev => credit += 1.0,
                Some(_) if mode == SpanMatch::Lenient => credit += 0.5,
                _ => {}
            }
        }
    }
    let mut score = SpanScore { credit, pred_chars: n_pred, gold_chars: n_gold, ..SpanScore::default() };
    match (n_pred, n_gold) {
        (0, 0) => {
            score.precision = 1.0;
            score.recall = 1.0;
            score.f1 = 1.0;
        }
        (0, _) | (_, 0) => {}
        _ => {
            score.precision = credit / n_pred as f64;
            score.recall = credit / n_gold as f64;
            let sum = score.precision + score.recall;
            score.f1 = if sum > 0.0 { 2.0 * score.precision * score.recall / sum } else { 0.0 };
        }
    }
    Ok(score)
}

pub fn span_f1(pred: &[Vec<ErrorSpan>], gold: &[Vec<ErrorSpan>], mode: SpanMatch) -> Result<f64> {
    Ok(span_scores(pred, gold, mode)?.f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag::{Bad as B, Ok as O};

    fn tags(t: &[crate::corpus::Tag]) -> WordTags {
        WordTags(t.to_vec())
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // ranks [1, 2.5, 2.5, 4] vs [1, 3, 2, 4]: sxy 4.5, sxx 4.5, syy 5
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.9f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn mcc_examples() {
        let gold = [tags(&[O, B, O, B])];
        assert!((mcc(&gold, &gold).unwrap() - 1.0).abs() < 1e-12);
        let pred = [tags(&[O, B, O, B])];
        let gold = [tags(&[O, B, B, O])];
        let c = ConfusionCounts::from_tags(&pred, &gold).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (1, 1, 1, 1));
        assert_eq!(c.mcc(), 0.0);
        let all_ok = [tags(&[O, O, O, O])];
        assert_eq!(mcc(&all_ok, &gold).unwrap(), 0.0);
        assert!(mcc(&[tags(&[O])], &gold).is_err());
    }

    #[test]
    fn span_f1_examples() {
        let gold = vec![vec![ErrorSpan::new(10, 15, Severity::Major), ErrorSpan::new(55, 70, Severity::Minor)]];
        for mode in [SpanMatch::Strict, SpanMatch::Lenient] {
            assert_eq!(span_f1(&gold, &gold, mode).unwrap(), 1.0);
        }
        let pred = vec![vec![ErrorSpan::new(10, 15, Severity::Minor)]];
        let gold = vec![vec![ErrorSpan::new(10, 15, Severity::Major)]];
        assert_eq!(span_f1(&pred, &gold, SpanMatch::Strict).unwrap(), 0.0);
        assert!((span_f1(&pred, &gold, SpanMatch::Lenient).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(span_f1(&[vec![]], &gold, SpanMatch::Lenient).unwrap(), 0.0);
        assert_eq!(span_f1(&[vec![]], &[vec![]], SpanMatch::Lenient).unwrap(), 1.0);
    }

    #[test]
    fn overlapping_prediction_rejected() {
        let pred = vec![vec![ErrorSpan::new(0, 5, Severity::Minor), ErrorSpan::new(3, 7, Severity::Major)]];
        assert!(span_f1(&pred, &[vec![]], SpanMatch::Lenient).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn flip(t: &WordTags) -> WordTags {
            WordTags(t.iter().map(|x| if x.is_bad() { O } else { B }).collect())
        }

        fn tag_seq(n: usize) -> impl Strategy<Value = WordTags> {
            prop::collection::vec(prop::bool::ANY, n)
                .prop_map(|v| WordTags(v.into_iter().map(|b| if b { B } else { O }).collect()))
        }

        proptest! {
            #[test]
            fn spearman_invariant_under_monotone_maps(xs in prop::collection::vec(-50i32..50, 2..20), seed in 0u64..1000) {
                let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
                let y: Vec<f64> = xs.iter().enumerate().map(|(i, &v)| (((v + 50) as u64 * 31 + i as u64 * 7 + seed) % 17) as f64).collect();
                if let Ok(r) = spearman(&x, &y) {
                    let tx: Vec<f64> = x.iter().map(|v| v.exp() * 3.0).collect();
                    let ty: Vec<f64> = y.iter().map(|v| v * v * v).collect();
                    let r2 = spearman(&tx, &ty).unwrap();
                    prop_assert!((r - r2).abs() < 1e-9);
                }
            }

            #[test]
            fn mcc_symmetric_under_relabeling((p, g) in (1usize..15).prop_flat_map(|n| (tag_seq(n), tag_seq(n)))) {
                let a = mcc(&[p.clone()], &[g.clone()]).unwrap();
                let b = mcc(&[flip(&p)], &[flip(&g)]).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
