//! Corruption of a reference translation into a masked pseudo translation.
//!
//! Spans are sampled one by one (count, lengths, positions, severities),
//! then each span is either replaced by mask symbols, widened with extra
//! masks (over-translation) or shortened by deleting tokens (omission). Every
//! mask is tagged BAD, as is the token to the right of each omission.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{mqm_from_severities, Severity, Tag, TokenizedText, WordTags};
use crate::error::{QeError, Result};
use crate::stats::CorruptionStats;

/// Reserved placeholder for tokens the fixer must fill.
pub const MASK: &str = "<mask>";

/// Attempts per span length before giving up on further spans.
pub const LENGTH_RESAMPLE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "count")]
pub enum SpanEdit {
    Replace,
    /// Extra masks inserted inside the span.
    Insert(usize),
    /// Reference tokens removed from the span start.
    Delete(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedSpan {
    pub start_tok: usize,
    pub length: usize,
    pub severity: Severity,
    pub edit: SpanEdit,
}

impl PlannedSpan {
    pub fn end_tok(&self) -> usize {
        self.start_tok + self.length
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionPlan {
    pub spans: Vec<PlannedSpan>,
    pub reference_len: usize,
}

impl CorruptionPlan {
    pub fn empty(reference_len: usize) -> Self {
        CorruptionPlan { spans: Vec::new(), reference_len }
    }

    pub fn validate(&self) -> Result<()> {
        let mut eol = 0;
        let mut total = 0;
        for span in &self.spans {
            if span.length == 0 {
                return Err(QeError::InvalidValue("planned span of length 0".into()));
            }
            if span.start_tok < eol {
                return Err(QeError::InvalidValue(format!(
                    "span at token {} overlaps or precedes the previous span ending at {eol}",
                    span.start_tok
                )));
            }
            if span.end_tok() > self.reference_len {
                return Err(QeError::InvalidValue(format!(
                    "span {}..{} exceeds reference length {}",
                    span.start_tok,
                    span.end_tok(),
                    self.reference_len
                )));
            }
            match span.edit {
                SpanEdit::Insert(0) => return Err(QeError::InvalidValue("insert of zero tokens".into())),
                SpanEdit::Delete(k) if k == 0 || k > span.length => {
                    return Err(QeError::InvalidValue(format!("delete of {k} tokens from a span of {}", span.length)))
                }
                _ => {}
            }
            total += span.length;
            eol = span.end_tok();
        }
        if !self.spans.is_empty() && total >= self.reference_len {
            return Err(QeError::InvalidValue(format!(
                "total span length {total} not below reference length {}",
                self.reference_len
            )));
        }
        Ok(())
    }
}

/// Probabilities of the over-/under-translation edits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditProbs {
    pub insert: f64,
    pub delete: f64,
}

impl Default for EditProbs {
    fn default() -> Self {
        EditProbs { insert: 0.15, delete: 0.15 }
    }
}

impl EditProbs {
    pub const NONE: EditProbs = EditProbs { insert: 0.0, delete: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.insert) || !ok(self.delete) || self.insert + self.delete > 1.0 {
            return Err(QeError::InvalidValue(format!(
                "edit probabilities insert={} delete={} must be in [0,1] and sum to at most 1",
                self.insert, self.delete
            )));
        }
        Ok(())
    }
}

pub fn plan_corruption<R: Rng + ?Sized>(
    n: usize,
    stats: &CorruptionStats,
    edits: EditProbs,
    rng: &mut R,
) -> Result<CorruptionPlan> {
    if n == 0 {
        return Err(QeError::EmptyTranslation);
    }
    edits.validate()?;
    // every span needs at least one token and the total must stay below n
    let wanted = stats.span_count.sample(rng).min(n - 1);

    let mut lengths = Vec::with_capacity(wanted);
    let mut running = 0;
    'spans: for _ in 0..wanted {
        for _ in 0..LENGTH_RESAMPLE_LIMIT {
            let len = stats.span_length.sample(rng);
            if len >= 1 && running + len < n {
                running += len;
                lengths.push(len);
                continue 'spans;
            }
        }
        break;
    }

    let mut spans = Vec::with_capacity(lengths.len());
    let mut eol = 0;
    let mut remaining: usize = lengths.iter().sum();
    for &length in &lengths {
        let hi = n - remaining;
        let start_tok = rng.gen_range(eol..=hi);
        let severity = stats.severity.sample(rng);
        let u: f64 = rng.gen();
        let edit = if u < edits.insert {
            SpanEdit::Insert(rng.gen_range(1..=length))
        } else if u < edits.insert + edits.delete && length >= 2 {
            SpanEdit::Delete(rng.gen_range(1..length))
        } else {
            SpanEdit::Replace
        };
        spans.push(PlannedSpan { start_tok, length, severity, edit });
        eol = start_tok + length;
        remaining -= length;
    }
    Ok(CorruptionPlan { spans, reference_len: n })
}

/// Output positions belonging to one planned span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskGroup {
    pub severity: Severity,
    pub mask_positions: Vec<usize>,
    /// Unmasked token tagged BAD because it borders an omission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omission_marker: Option<usize>,
}

impl MaskGroup {
    /// Inclusive token range covered by this group, if any.
    pub fn token_range(&self) -> Option<(usize, usize)> {
        let it = self.mask_positions.iter().copied().chain(self.omission_marker);
        let lo = it.clone().min()?;
        let hi = it.max()?;
        Some((lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedTranslation {
    pub tokens: Vec<String>,
    /// Reference token replaced at each position; `None` for inserted masks and untouched tokens.
    pub replaced: Vec<Option<String>>,
    pub groups: Vec<MaskGroup>,
    pub gold_tags: Vec<Tag>,
    pub pseudo_mqm: f64,
}

impl MaskedTranslation {
    pub fn mask_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == MASK).count()
    }

    pub fn tags(&self) -> WordTags {
        WordTags(self.gold_tags.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.replaced.len() != n || self.gold_tags.len() != n {
            return Err(QeError::InvalidValue("masked translation fields have unequal lengths".into()));
        }
        for g in &self.groups {
            for &p in g.mask_positions.iter().chain(g.omission_marker.iter()) {
                if p >= n {
                    return Err(QeError::InvalidValue(format!("position {p} out of range")));
                }
            }
            for &p in &g.mask_positions {
                if self.tokens[p] != MASK {
                    return Err(QeError::InvalidValue(format!("position {p} is not a mask")));
                }
            }
        }
        Ok(())
    }
}

struct Builder {
    tokens: Vec<String>,
    replaced: Vec<Option<String>>,
    tags: Vec<Tag>,
    /// Groups awaiting their omission marker on the next pushed token.
    pending_markers: Vec<usize>,
}

impl Builder {
    fn push(&mut self, token: String, replaced: Option<String>, tag: Tag, groups: &mut [MaskGroup]) {
        let pos = self.tokens.len();
        let tag = if self.pending_markers.is_empty() { tag } else { Tag::Bad };
        for g in self.pending_markers.drain(..) {
            groups[g].omission_marker = Some(pos);
        }
        self.tokens.push(token);
        self.replaced.push(replaced);
        self.tags.push(tag);
    }

    fn push_mask(&mut self, replaced: Option<String>, group: usize, groups: &mut [MaskGroup]) {
        // a marker may coincide with a mask; BAD either way
        for g in self.pending_markers.drain(..) {
            groups[g].omission_marker = Some(self.tokens.len());
        }
        groups[group].mask_positions.push(self.tokens.len());
        self.tokens.push(MASK.to_string());
        self.replaced.push(replaced);
        self.tags.push(Tag::Bad);
    }
}

pub fn apply_corruption<R: Rng + ?Sized>(
    reference: &TokenizedText,
    plan: &CorruptionPlan,
    rng: &mut R,
) -> Result<MaskedTranslation> {
    if plan.reference_len != reference.len() {
        return Err(QeError::InvalidValue(format!(
            "plan is for {} tokens but reference has {}",
            plan.reference_len,
            reference.len()
        )));
    }
    plan.validate()?;
    let ref_tokens = reference.tokens();
    let mut groups: Vec<MaskGroup> = plan
        .spans
        .iter()
        .map(|s| MaskGroup { severity: s.severity, mask_positions: Vec::new(), omission_marker: None })
        .collect();
    let mut b = Builder { tokens: Vec::new(), replaced: Vec::new(), tags: Vec::new(), pending_markers: Vec::new() };

    let mut cursor = 0;
    for (gi, span) in plan.spans.iter().enumerate() {
        for tok in &ref_tokens[cursor..span.start_tok] {
            b.push(tok.clone(), None, Tag::Ok, &mut groups);
        }
        let span_tokens = &ref_tokens[span.start_tok..span.end_tok()];
        match span.edit {
            SpanEdit::Replace => {
                for tok in span_tokens {
                    b.push_mask(Some(tok.clone()), gi, &mut groups);
                }
            }
            SpanEdit::Insert(extra) => {
                let mut slots: Vec<Option<String>> = span_tokens.iter().cloned().map(Some).collect();
                for _ in 0..extra {
                    let at = rng.gen_range(0..=slots.len());
                    slots.insert(at, None);
                }
                for slot in slots {
                    b.push_mask(slot, gi, &mut groups);
                }
            }
            SpanEdit::Delete(removed) => {
                b.pending_markers.push(gi);
                for tok in &span_tokens[removed..] {
                    b.push_mask(Some(tok.clone()), gi, &mut groups);
                }
            }
        }
        cursor = span.end_tok();
    }
    for tok in &ref_tokens[cursor..] {
        b.push(tok.clone(), None, Tag::Ok, &mut groups);
    }
    if !b.pending_markers.is_empty() {
        // omission at sentence end: mark the left neighbour instead
        let Some(last) = b.tokens.len().checked_sub(1) else {
            return Err(QeError::EmptyTranslation);
        };
        b.tags[last] = Tag::Bad;
        for g in b.pending_markers.drain(..) {
            groups[g].omission_marker = Some(last);
        }
    }

    let pseudo_mqm = mqm_from_severities(plan.spans.iter().map(|s| s.severity), b.tokens.len())?;
    Ok(MaskedTranslation { tokens: b.tokens, replaced: b.replaced, groups, gold_tags: b.tags, pseudo_mqm })
}

/// Plans and applies one corruption.
pub fn corrupt<R: Rng + ?Sized>(
    reference: &TokenizedText,
    stats: &CorruptionStats,
    edits: EditProbs,
    rng: &mut R,
) -> Result<(CorruptionPlan, MaskedTranslation)> {
    let plan = plan_corruption(reference.len(), stats, edits, rng)?;
    let masked = apply_corruption(reference, &plan, rng)?;
    Ok((plan, masked))
}

/// Line-delimited record written by the corruption stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedRecord {
    pub id: String,
    pub src: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub mt: String,
    pub tags: String,
    pub score: f64,
    pub groups: Vec<MaskGroup>,
    pub replaced: Vec<Option<String>>,
}

impl MaskedRecord {
    pub fn new(id: &str, source: &str, reference: &TokenizedText, masked: &MaskedTranslation) -> Self {
        MaskedRecord {
            id: id.to_string(),
            src: source.to_string(),
            reference: reference.detokenize(),
            mt: masked.tokens.join(" "),
            tags: masked.tags().to_string(),
            score: masked.pseudo_mqm,
            groups: masked.groups.clone(),
            replaced: masked.replaced.clone(),
        }
    }

    pub fn masked(&self) -> Result<MaskedTranslation> {
        let tokens: Vec<String> = self.mt.split_whitespace().map(str::to_string).collect();
        let tags: WordTags = self.tags.parse()?;
        let m = MaskedTranslation {
            tokens,
            replaced: self.replaced.clone(),
            groups: self.groups.clone(),
            gold_tags: tags.0,
            pseudo_mqm: self.score,
        };
        m.validate().map_err(|e| QeError::validation(&self.id, e.to_string()))?;
        Ok(m)
    }
}
