//! Empirical distributions driving corruption: spans per sentence, span
//! length in tokens, and span severity.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{QeSample, Severity};
use crate::error::{QeError, Result};

const PROB_TOLERANCE: f64 = 1e-9;

/// A finite categorical distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDist<T>", into = "RawDist<T>")]
pub struct CategoricalDist<T: Clone + PartialEq> {
    support: Vec<T>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDist<T> {
    support: Vec<T>,
    probs: Vec<f64>,
}

impl<T: Clone + PartialEq> TryFrom<RawDist<T>> for CategoricalDist<T> {
    type Error = QeError;

    fn try_from(raw: RawDist<T>) -> Result<Self> {
        CategoricalDist::new(raw.support, raw.probs)
    }
}

impl<T: Clone + PartialEq> From<CategoricalDist<T>> for RawDist<T> {
    fn from(d: CategoricalDist<T>) -> Self {
        RawDist { support: d.support, probs: d.probs }
    }
}

impl<T: Clone + PartialEq> CategoricalDist<T> {
    pub fn new(support: Vec<T>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(QeError::InvalidDistribution("empty support".into()));
        }
        if support.len() != probs.len() {
            return Err(QeError::InvalidDistribution(format!(
                "{} support values but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(QeError::InvalidDistribution("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(QeError::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        for (i, v) in support.iter().enumerate() {
            if support[..i].contains(v) {
                return Err(QeError::InvalidDistribution("duplicate support value".into()));
            }
        }
        Ok(CategoricalDist { support, probs })
    }

    /// Point mass on `value`.
    pub fn degenerate(value: T) -> Self {
        CategoricalDist { support: vec![value], probs: vec![1.0] }
    }

    /// Normalized frequencies of the given counts, in the given order.
    pub fn from_counts(counts: Vec<(T, usize)>) -> Result<Self> {
        let total: usize = counts.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Err(QeError::InvalidDistribution("no observations".into()));
        }
        let (support, probs) = counts.into_iter().map(|(v, c)| (v, c as f64 / total as f64)).unzip();
        CategoricalDist::new(support, probs)
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, value: &T) -> f64 {
        self.support.iter().position(|v| v == value).map_or(0.0, |i| self.probs[i])
    }

    /// Inverse-CDF draw from one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (v, &p) in self.support.iter().zip(&self.probs) {
            cum += p;
            if u < cum {
                return v.clone();
            }
        }
        // u landed in the rounding slack above the last cumulative sum
        let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        self.support[last].clone()
    }
}

pub fn sample_categorical<T: Clone + PartialEq, R: Rng + ?Sized>(dist: &CategoricalDist<T>, rng: &mut R) -> T {
    dist.sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionStats {
    /// Free-form provenance note, e.g. "synthetic defaults".
    #[serde(default)]
    pub description: String,
    pub span_count: CategoricalDist<usize>,
    pub span_length: CategoricalDist<usize>,
    pub severity: CategoricalDist<Severity>,
}

impl CorruptionStats {
    /// Synthetic defaults shipped for users without annotated data. These are
    /// not measured from any real annotation set.
    pub fn synthetic_defaults() -> Self {
        CorruptionStats {
            description: "synthetic defaults (not estimated from annotated data)".into(),
            span_count: CategoricalDist::new(vec![0, 1, 2, 3, 4], vec![0.30, 0.30, 0.20, 0.12, 0.08])
                .expect("valid default"),
            span_length: CategoricalDist::new(vec![1, 2, 3, 4, 5, 6], vec![0.40, 0.25, 0.15, 0.10, 0.06, 0.04])
                .expect("valid default"),
            severity: CategoricalDist::new(Severity::ALL.to_vec(), vec![0.45, 0.50, 0.05]).expect("valid default"),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| QeError::io(path, e))?;
        let stats: CorruptionStats = serde_json::from_str(&text).map_err(|e| QeError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if stats.span_length.support().contains(&0) {
            return Err(QeError::InvalidDistribution("span lengths must be >= 1".into()));
        }
        Ok(stats)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Empirical span-count, span-length (in tokens) and severity distributions of annotated samples.
pub fn estimate_stats(samples: &[QeSample]) -> Result<CorruptionStats> {
    if samples.is_empty() {
        return Err(QeError::EmptyInput("no samples to estimate statistics from"));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut lengths: BTreeMap<usize, usize> = BTreeMap::new();
    let mut severities = [0usize; 3];
    for sample in samples {
        let spans =
            sample.spans.as_ref().ok_or_else(|| QeError::validation(&sample.id, "sample has no span annotation"))?;
        *counts.entry(spans.len()).or_default() += 1;
        for span in spans {
            let len = sample.translation.offsets().iter().filter(|&&(s, e)| span.overlaps(s, e)).count();
            if len == 0 {
                return Err(QeError::validation(&sample.id, format!("span {span} covers no token")));
            }
            *lengths.entry(len).or_default() += 1;
            severities[span.severity.index()] += 1;
        }
    }
    if lengths.is_empty() {
        return Err(QeError::EmptyInput("no spans to estimate length/severity"));
    }
    let severity_counts =
        Severity::ALL.iter().filter(|s| severities[s.index()] > 0).map(|&s| (s, severities[s.index()])).collect();
    Ok(CorruptionStats {
        description: format!("estimated from {} annotated samples", samples.len()),
        span_count: CategoricalDist::from_counts(counts.into_iter().collect())?,
        span_length: CategoricalDist::from_counts(lengths.into_iter().collect())?,
        severity: CategoricalDist::from_counts(severity_counts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ErrorSpan;
    use crate::rng::seeded;

    fn annotated(id: &str, spans: Vec<ErrorSpan>) -> QeSample {
        QeSample::new(id, "src", "a b c d e f g h").with_spans(spans).unwrap()
    }

    #[test]
    fn estimate_counts() {
        let samples = vec![
            annotated("1", vec![ErrorSpan::new(0, 1, Severity::Major)]),
            annotated(
                "2",
                vec![
                    ErrorSpan::new(0, 3, Severity::Major),
                    ErrorSpan::new(4, 5, Severity::Major),
                    ErrorSpan::new(8, 11, Severity::Major),
                ],
            ),
        ];
        let stats = estimate_stats(&samples).unwrap();
        assert_eq!(stats.span_count.support(), [1, 3]);
        assert_eq!(stats.span_count.probs(), [0.5, 0.5]);
        assert_eq!(stats.severity.support(), [Severity::Major]);
        assert_eq!(stats.severity.probs(), [1.0]);
        // lengths in tokens: 1, 2, 1, 2
        assert_eq!(stats.span_length.support(), [1, 2]);
        assert_eq!(stats.span_length.probs(), [0.5, 0.5]);
    }

    #[test]
    fn estimate_errors() {
        assert!(estimate_stats(&[]).is_err());
        let err = estimate_stats(&[annotated("1", vec![]), annotated("2", vec![])]).unwrap_err();
        assert!(err.to_string().contains("no spans to estimate length/severity"));
        let no_annotation = QeSample::new("x", "s", "a b");
        assert!(estimate_stats(&[no_annotation]).is_err());
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(CategoricalDist::new(vec![1, 2], vec![0.5, 0.4]).is_err());
        assert!(CategoricalDist::new(vec![1, 1], vec![0.5, 0.5]).is_err());
        assert!(CategoricalDist::new(vec![1, 2], vec![1.5, -0.5]).is_err());
        assert!(CategoricalDist::<usize>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn degenerate_always_same() {
        let d = CategoricalDist::degenerate(7usize);
        let mut rng = seeded(3);
        assert!((0..100).all(|_| sample_categorical(&d, &mut rng) == 7));
    }

    #[test]
    fn fair_coin_frequencies() {
        let d = CategoricalDist::new(vec!['a', 'b'], vec![0.5, 0.5]).unwrap();
        let mut rng = seeded(1);
        let a = (0..10_000).filter(|_| d.sample(&mut rng) == 'a').count();
        let freq = a as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn fixed_seed_repeats() {
        let d = CorruptionStats::synthetic_defaults().span_length;
        let draw = |seed| {
            let mut rng = seeded(seed);
            (0..50).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn estimate_then_sample_matches_frequencies() {
        let mut samples = Vec::new();
        let layouts: [&[(usize, usize, Severity)]; 4] = [
            &[(0, 1, Severity::Minor)],
            &[(0, 3, Severity::Major), (6, 7, Severity::Minor)],
            &[],
            &[(2, 5, Severity::Critical), (8, 9, Severity::Major), (10, 15, Severity::Major)],
        ];
        for (i, layout) in layouts.iter().cycle().take(40).enumerate() {
            let spans = layout.iter().map(|&(s, e, v)| ErrorSpan::new(s, e, v)).collect();
            samples.push(annotated(&i.to_string(), spans));
        }
        let stats = estimate_stats(&samples).unwrap();
        let mut rng = seeded(11);
        let draws = 100_000;
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for _ in 0..draws {
            *hist.entry(stats.span_count.sample(&mut rng)).or_default() += 1;
        }
        for (v, p) in stats.span_count.support().iter().zip(stats.span_count.probs()) {
            let f = hist.get(v).copied().unwrap_or(0) as f64 / draws as f64;
            assert!((f - p).abs() < 0.01, "count {v}: {f} vs {p}");
        }
        let mut sev = [0usize; 3];
        for _ in 0..draws {
            sev[stats.severity.sample(&mut rng).index()] += 1;
        }
        for s in Severity::ALL {
            let f = sev[s.index()] as f64 / draws as f64;
            assert!((f - stats.severity.prob_of(&s)).abs() < 0.01);
        }
    }

    #[test]
    fn stats_json_round_trip() {
        let stats = CorruptionStats::synthetic_defaults();
        let text = stats.to_json().unwrap();
        assert!(text.contains("\"critical\""));
        let back: CorruptionStats = serde_json::from_str(&text).unwrap();
        assert_eq!(back, stats);
    }

    #[test]
    fn invalid_stats_file_rejected() {
        let bad = r#"{"span_count":{"support":[0],"probs":[0.9]},
                      "span_length":{"support":[1],"probs":[1.0]},
                      "severity":{"support":["minor"],"probs":[1.0]}}"#;
        assert!(serde_json::from_str::<CorruptionStats>(bad).is_err());
    }
}
