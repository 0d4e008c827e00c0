//! Shared data model: severities, word tags, character-offset tokenization,
//! error spans, the MQM sentence score and the line-delimited QE record format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QeError, Result};

/// Error gravity. The derived order is "worse than": `Critical > Major > Minor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Major,
    Critical,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Minor, Severity::Major, Severity::Critical];

    /// MQM penalty weight.
    pub fn penalty(self) -> u32 {
        match self {
            Severity::Minor => 1,
            Severity::Major => 5,
            Severity::Critical => 10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Minor => "minor",
            Severity::Major => "major",
            Severity::Critical => "critical",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minor" => Ok(Severity::Minor),
            "major" => Ok(Severity::Major),
            "critical" => Ok(Severity::Critical),
            other => Err(QeError::InvalidValue(format!("unknown severity {other:?}"))),
        }
    }
}

/// Binary word-level quality label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "BAD")]
    Bad,
}

impl Tag {
    pub fn is_bad(self) -> bool {
        self == Tag::Bad
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Ok => "OK",
            Tag::Bad => "BAD",
        })
    }
}

impl FromStr for Tag {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "OK" => Ok(Tag::Ok),
            "BAD" => Ok(Tag::Bad),
            other => Err(QeError::InvalidValue(format!("unknown tag {other:?}"))),
        }
    }
}

/// One tag per translation token.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordTags(pub Vec<Tag>);

impl WordTags {
    pub fn all_ok(n: usize) -> Self {
        WordTags(vec![Tag::Ok; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Tag> + '_ {
        self.0.iter().copied()
    }

    pub fn bad_count(&self) -> usize {
        self.0.iter().filter(|t| t.is_bad()).count()
    }
}

impl fmt::Display for WordTags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, tag) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{tag}")?;
        }
        Ok(())
    }
}

impl FromStr for WordTags {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        s.split_whitespace().map(Tag::from_str).collect::<Result<Vec<_>>>().map(WordTags)
    }
}

impl From<Vec<Tag>> for WordTags {
    fn from(tags: Vec<Tag>) -> Self {
        WordTags(tags)
    }
}

/// Whitespace-tokenized text with end-exclusive character offsets into `raw`.
///
/// Offsets count Unicode scalar values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    raw: String,
    tokens: Vec<String>,
    offsets: Vec<(usize, usize)>,
}

impl TokenizedText {
    /// Builds the text `tokens.join(" ")`. Tokens must be non-empty and free of whitespace.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut raw = String::new();
        let mut out = Vec::with_capacity(tokens.len());
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut pos = 0;
        for (i, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(QeError::InvalidValue(format!("token {i} ({tok:?}) is empty or contains whitespace")));
            }
            if i > 0 {
                raw.push(' ');
                pos += 1;
            }
            let len = tok.chars().count();
            raw.push_str(tok);
            offsets.push((pos, pos + len));
            out.push(tok.to_string());
            pos += len;
        }
        Ok(TokenizedText { raw, tokens: out, offsets })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn offsets(&self) -> &[(usize, usize)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Length of `raw` in characters.
    pub fn char_len(&self) -> usize {
        self.raw.chars().count()
    }

    pub fn detokenize(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Splits on Unicode whitespace, recording character offsets.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut idx = 0;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                offsets.push((start, idx));
                tokens.push(std::mem::take(&mut current));
            }
        } else {
            if current.is_empty() {
                start = idx;
            }
            current.push(ch);
        }
        idx += 1;
    }
    if !current.is_empty() {
        offsets.push((start, idx));
        tokens.push(current);
    }
    TokenizedText { raw: text.to_string(), tokens, offsets }
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Substring of `text` by character positions `[start, end)`.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.nth(start).unwrap_or(text.len());
    let b_end = if end > start { indices.nth(end - start - 1).unwrap_or(text.len()) } else { b_start };
    &text[b_start..b_end]
}

/// Character-indexed error span, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ErrorSpan {
    pub start: usize,
    pub end: usize,
    pub severity: Severity,
}

impl ErrorSpan {
    pub fn new(start: usize, end: usize, severity: Severity) -> Self {
        ErrorSpan { start, end, severity }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

impl fmt::Display for ErrorSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.severity)
    }
}

impl FromStr for ErrorSpan {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let (Some(a), Some(b), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(QeError::InvalidValue(format!("span {s:?} is not start:end:severity")));
        };
        let parse = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| QeError::InvalidValue(format!("bad span index {v:?} in {s:?}")))
        };
        Ok(ErrorSpan::new(parse(a)?, parse(b)?, c.trim().parse()?))
    }
}

/// Checks bounds, non-emptiness, ordering and disjointness against a text of `char_len` characters.
pub fn validate_spans(spans: &[ErrorSpan], char_len: usize) -> Result<()> {
    for span in spans {
        if span.start >= span.end || span.end > char_len {
            return Err(QeError::SpanOutOfBounds { start: span.start, end: span.end, len: char_len });
        }
    }
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(QeError::OverlappingSpans(format!("{} and {}", pair[0], pair[1])));
        }
    }
    Ok(())
}

/// A token is BAD iff its character range overlaps some span.
pub fn tags_from_spans(translation: &TokenizedText, spans: &[ErrorSpan]) -> Result<WordTags> {
    validate_spans(spans, translation.char_len())?;
    let tags = translation
        .offsets()
        .iter()
        .map(|&(s, e)| if spans.iter().any(|span| span.overlaps(s, e)) { Tag::Bad } else { Tag::Ok })
        .collect();
    Ok(WordTags(tags))
}

/// `1 - (n_minor + 5 n_major + 10 n_critical) / n`, unclamped.
pub fn mqm_score(n_minor: usize, n_major: usize, n_critical: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(QeError::EmptyTranslation);
    }
    let penalty = n_minor as f64 * Severity::Minor.penalty() as f64
        + n_major as f64 * Severity::Major.penalty() as f64
        + n_critical as f64 * Severity::Critical.penalty() as f64;
    // one rounding step instead of two keeps (1,1,1,10) at exactly -0.6
    Ok((n as f64 - penalty) / n as f64)
}

/// MQM score for a list of error severities over `n` tokens.
pub fn mqm_from_severities<I>(severities: I, n: usize) -> Result<f64>
where
    I: IntoIterator<Item = Severity>,
{
    let mut counts = [0usize; 3];
    for s in severities {
        counts[s.index()] += 1;
    }
    mqm_score(counts[0], counts[1], counts[2], n)
}

/// The record flowing through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct QeSample {
    pub id: String,
    pub source: String,
    pub translation: TokenizedText,
    pub tags: Option<WordTags>,
    pub mqm_score: Option<f64>,
    pub spans: Option<Vec<ErrorSpan>>,
}

impl QeSample {
    pub fn new(id: impl Into<String>, source: impl Into<String>, translation: &str) -> Self {
        QeSample {
            id: id.into(),
            source: source.into(),
            translation: tokenize(translation),
            tags: None,
            mqm_score: None,
            spans: None,
        }
    }

    /// Attaches spans and derives tags and MQM score from them.
    pub fn with_spans(mut self, spans: Vec<ErrorSpan>) -> Result<Self> {
        let tags =
            tags_from_spans(&self.translation, &spans).map_err(|e| QeError::validation(&self.id, e.to_string()))?;
        self.mqm_score = Some(
            mqm_from_severities(spans.iter().map(|s| s.severity), self.translation.len())
                .map_err(|e| QeError::validation(&self.id, e.to_string()))?,
        );
        self.tags = Some(tags);
        self.spans = Some(spans);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.translation.len();
        if let Some(tags) = &self.tags {
            if tags.len() != n {
                return Err(QeError::validation(&self.id, format!("{} tags for {} tokens", tags.len(), n)));
            }
        }
        if let Some(spans) = &self.spans {
            validate_spans(spans, self.translation.char_len())
                .map_err(|e| QeError::validation(&self.id, e.to_string()))?;
            if let Some(tags) = &self.tags {
                let derived = tags_from_spans(&self.translation, spans)?;
                if &derived != tags {
                    return Err(QeError::validation(
                        &self.id,
                        format!("tags \"{tags}\" inconsistent with spans (expected \"{derived}\")"),
                    ));
                }
            }
        }
        if let Some(score) = self.mqm_score {
            if !score.is_finite() {
                return Err(QeError::validation(&self.id, "non-finite score"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct QeRecord {
    id: String,
    src: String,
    mt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<String>>,
}

impl From<&QeSample> for QeRecord {
    fn from(s: &QeSample) -> Self {
        QeRecord {
            id: s.id.clone(),
            src: s.source.clone(),
            mt: s.translation.raw().to_string(),
            tags: s.tags.as_ref().map(|t| t.to_string()),
            score: s.mqm_score,
            spans: s.spans.as_ref().map(|v| v.iter().map(|sp| sp.to_string()).collect()),
        }
    }
}

impl TryFrom<QeRecord> for QeSample {
    type Error = QeError;

    fn try_from(r: QeRecord) -> Result<Self> {
        let tags = r.tags.as_deref().map(str::parse).transpose()?;
        let spans = r.spans.map(|v| v.iter().map(|s| s.parse()).collect::<Result<Vec<ErrorSpan>>>()).transpose()?;
        let sample =
            QeSample { id: r.id, source: r.src, translation: tokenize(&r.mt), tags, mqm_score: r.score, spans };
        sample.validate()?;
        Ok(sample)
    }
}

/// Parses line-delimited QE records. Blank lines are skipped.
pub fn parse_qe_jsonl<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<QeSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| QeError::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| QeError::Parse { path: origin.to_path_buf(), line: i + 1, message };
        let record: QeRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let sample = QeSample::try_from(record).map_err(|e| parse_err(e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn read_qe_jsonl(path: impl AsRef<Path>) -> Result<Vec<QeSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| QeError::io(path, e))?;
    parse_qe_jsonl(BufReader::new(file), path)
}

pub fn write_qe_jsonl<W: Write>(samples: &[QeSample], mut out: W) -> Result<()> {
    for sample in samples {
        serde_json::to_writer(&mut out, &QeRecord::from(sample))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// One `source<TAB>target` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub id: String,
    pub source: String,
    pub target: String,
}

/// Reads a tab-separated parallel corpus. Record ids are the 1-based line numbers.
pub fn read_parallel_tsv(path: impl AsRef<Path>) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| QeError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| QeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((src, tgt)) = line.split_once('\t') else {
            return Err(QeError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected source<TAB>target".into(),
            });
        };
        if tgt.contains('\t') || tgt.trim().is_empty() {
            return Err(QeError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected exactly two non-empty columns".into(),
            });
        }
        out.push(ParallelPair { id: (i + 1).to_string(), source: src.to_string(), target: tgt.to_string() });
    }
    Ok(out)
}

pub fn write_parallel_tsv<W: Write>(pairs: &[ParallelPair], mut out: W) -> Result<()> {
    for p in pairs {
        writeln!(out, "{}\t{}", p.source, p.target)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GERMAN_MT: &str = "Regierung zieht 15 weitere leitende Steuerbeamte wegen Graft-Vorwürfen zurück";

    #[test]
    fn tokenize_examples() {
        let t = tokenize("Regierung zieht 15");
        assert_eq!(t.tokens(), ["Regierung", "zieht", "15"]);
        assert_eq!(t.offsets(), [(0, 9), (10, 15), (16, 18)]);

        let empty = tokenize("");
        assert!(empty.is_empty());
        assert!(empty.offsets().is_empty());

        let t = tokenize("a  b");
        assert_eq!(t.tokens(), ["a", "b"]);
        assert_eq!(t.offsets(), [(0, 1), (3, 4)]);
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let t = tokenize(GERMAN_MT);
        assert_eq!(char_slice(GERMAN_MT, 10, 15), "zieht");
        assert_eq!(char_slice(GERMAN_MT, 55, 70), "Graft-Vorwürfen");
        assert_eq!(t.offsets()[7], (55, 70));
        assert_eq!(t.offsets()[8], (71, 77));
    }

    #[test]
    fn mqm_examples() {
        assert!((mqm_score(1, 1, 0, 9).unwrap() - 0.3333).abs() < 1e-4);
        assert_eq!(mqm_score(0, 0, 0, 7).unwrap(), 1.0);
        assert_eq!(mqm_score(1, 1, 1, 10).unwrap(), -0.6);
        assert!(matches!(mqm_score(0, 0, 0, 0), Err(QeError::EmptyTranslation)));
    }

    #[test]
    fn tags_from_spans_examples() {
        let t = tokenize(GERMAN_MT);
        let spans = [ErrorSpan::new(10, 15, Severity::Major), ErrorSpan::new(55, 70, Severity::Minor)];
        let tags = tags_from_spans(&t, &spans).unwrap();
        assert_eq!(tags.to_string(), "OK BAD OK OK OK OK OK BAD OK");

        assert_eq!(tags_from_spans(&t, &[]).unwrap(), WordTags::all_ok(t.len()));

        let t = tokenize("a b");
        let tags = tags_from_spans(&t, &[ErrorSpan::new(2, 3, Severity::Minor)]).unwrap();
        assert_eq!(tags.0, vec![Tag::Ok, Tag::Bad]);
    }

    #[test]
    fn mid_token_span_marks_whole_token() {
        let t = tokenize("abc def");
        let tags = tags_from_spans(&t, &[ErrorSpan::new(1, 2, Severity::Minor)]).unwrap();
        assert_eq!(tags.0, vec![Tag::Bad, Tag::Ok]);
    }

    #[test]
    fn out_of_bounds_span_rejected() {
        let t = tokenize("a b");
        assert!(tags_from_spans(&t, &[ErrorSpan::new(2, 9, Severity::Minor)]).is_err());
        assert!(tags_from_spans(&t, &[ErrorSpan::new(2, 2, Severity::Minor)]).is_err());
        let overlapping = [ErrorSpan::new(0, 2, Severity::Minor), ErrorSpan::new(1, 3, Severity::Minor)];
        assert!(tags_from_spans(&t, &overlapping).is_err());
    }

    fn german_sample() -> QeSample {
        QeSample::new("de1", "Government Retires 15 More Senior Tax Officials On Graft Charges", GERMAN_MT)
            .with_spans(vec![ErrorSpan::new(10, 15, Severity::Major), ErrorSpan::new(55, 70, Severity::Minor)])
            .unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let sample = german_sample();
        assert!((sample.mqm_score.unwrap() - 0.3333).abs() < 1e-4);
        let mut buf = Vec::new();
        write_qe_jsonl(std::slice::from_ref(&sample), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"10:15:major\""));
        assert!(text.contains("\"OK BAD OK OK OK OK OK BAD OK\""));
        let back = parse_qe_jsonl(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, vec![sample]);
    }

    #[test]
    fn empty_file_reads_empty() {
        assert!(parse_qe_jsonl(&b""[..], Path::new("mem")).unwrap().is_empty());
    }

    #[test]
    fn inconsistent_tags_rejected() {
        let mut sample = german_sample();
        sample.tags.as_mut().unwrap().0[0] = Tag::Bad;
        let mut buf = Vec::new();
        write_qe_jsonl(&[sample], &mut buf).unwrap();
        let err = parse_qe_jsonl(&buf[..], Path::new("mem")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("inconsistent"), "{msg}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let data = b"{\"id\":\"a\",\"src\":\"x\",\"mt\":\"y\"}\nnot json\n";
        let err = parse_qe_jsonl(&data[..], Path::new("f.jsonl")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn span_string_format() {
        let s: ErrorSpan = "55:70:minor".parse().unwrap();
        assert_eq!(s, ErrorSpan::new(55, 70, Severity::Minor));
        assert_eq!(s.to_string(), "55:70:minor");
        assert!("55:70".parse::<ErrorSpan>().is_err());
        assert!("a:70:minor".parse::<ErrorSpan>().is_err());
    }

    #[test]
    fn severity_order_and_penalty() {
        assert!(Severity::Critical > Severity::Major && Severity::Major > Severity::Minor);
        let p: Vec<u32> = Severity::ALL.iter().map(|s| s.penalty()).collect();
        assert_eq!(p, [1, 5, 10]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn offsets_slice_back_to_tokens(text in "\\PC{0,40}") {
                let t = tokenize(&text);
                let mut prev_end = 0;
                for (tok, &(s, e)) in t.tokens().iter().zip(t.offsets()) {
                    prop_assert!(s < e && s >= prev_end);
                    prop_assert_eq!(char_slice(&text, s, e), tok.as_str());
                    prev_end = e;
                }
                prop_assert_eq!(t.detokenize(), normalize_whitespace(&text));
            }

            #[test]
            fn mqm_monotone(minor in 0usize..5, major in 0usize..5, crit in 0usize..5, n in 1usize..50) {
                let base = mqm_score(minor, major, crit, n).unwrap();
                prop_assert!(mqm_score(minor + 1, major, crit, n).unwrap() <= base);
                prop_assert!(mqm_score(minor, major + 1, crit, n).unwrap() <= base);
                prop_assert!(mqm_score(minor, major, crit + 1, n).unwrap() <= base);
                prop_assert!(mqm_score(minor, major, crit, n + 1).unwrap() >= base);
            }
        }
    }
}
