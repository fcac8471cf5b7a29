//! Domain types shared by every other module. No I/O, no model calls.
//!
//! Everything here is immutable after construction and safe to share across
//! threads.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoreError {
    #[error("image '{0}' has empty byte payload")]
    EmptyImage(String),
    #[error("caption text is empty")]
    EmptyCaption,
    #[error("trace list is empty")]
    NoTraces,
}

/// A raw image payload. Bytes are passed through untouched; only the
/// container knows how to decode them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    #[serde(with = "serde_bytes_b64")]
    pub bytes: Vec<u8>,
    pub media_type: String,
}

impl ImageRef {
    pub fn new(
        id: impl Into<String>,
        bytes: Vec<u8>,
        media_type: impl Into<String>,
    ) -> Result<Self, CoreError> {
        let id = id.into();
        if bytes.is_empty() {
            return Err(CoreError::EmptyImage(id));
        }
        Ok(Self {
            id,
            bytes,
            media_type: media_type.into(),
        })
    }
}

/// Image bytes serialize as base64 so samples and records stay valid JSON.
mod serde_bytes_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(de)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

/// One annotated dataset item: the normal-scene half, the conflicting half,
/// and the gold annotations used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub id: String,
    pub image_yes: ImageRef,
    pub image_but: ImageRef,
    /// Original combined image when the dataset provided one; reasoner
    /// prompts attach this when present, otherwise both halves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_full: Option<ImageRef>,
    pub gold_description: String,
    pub gold_objects: BTreeSet<String>,
    /// Canonical object -> alias surface forms.
    #[serde(default)]
    pub synonyms: BTreeMap<String, BTreeSet<String>>,
    /// Optional broader object vocabulary for mention extraction; always a
    /// superset of `gold_objects` after loading.
    #[serde(default)]
    pub mention_vocabulary: BTreeSet<String>,
}

impl ImageSample {
    /// Images the reasoner should see: the combined original when available,
    /// else the two halves in yes/but order.
    pub fn reasoner_attachments(&self) -> Vec<&ImageRef> {
        match &self.image_full {
            Some(full) => vec![full],
            None => vec![&self.image_yes, &self.image_but],
        }
    }
}

/// Lowercase, trim, and collapse internal whitespace runs to single spaces.
/// Returns an empty string for all-whitespace input; callers drop those.
pub fn normalize_tag(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A set of normalized tags. Construction normalizes and deduplicates;
/// empty results of normalization are dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSet {
    tags: BTreeSet<String>,
}

impl TagSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_raw<I, S>(raw: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tags = raw
            .into_iter()
            .map(|t| normalize_tag(t.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        Self { tags }
    }

    /// Split a backend's comma- or newline-separated tag list.
    pub fn from_delimited(text: &str) -> Self {
        Self::from_raw(text.split([',', '\n']))
    }

    pub fn union(&self, other: &TagSet) -> TagSet {
        TagSet {
            tags: self.tags.union(&other.tags).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &TagSet) -> usize {
        self.tags.intersection(&other.tags).count()
    }

    pub fn union_len(&self, other: &TagSet) -> usize {
        self.tags.union(&other.tags).count()
    }

    /// Comma-joined rendering for analyzer input; "(none)" when empty so the
    /// analyzer contract (non-empty sides) holds.
    pub fn render(&self) -> String {
        if self.tags.is_empty() {
            "(none)".to_string()
        } else {
            self.tags.iter().cloned().collect::<Vec<_>>().join(", ")
        }
    }
}

/// Non-empty, trimmed caption text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Caption {
    text: String,
}

impl Caption {
    pub fn new(text: impl AsRef<str>) -> Result<Self, CoreError> {
        let text = text.as_ref().trim().to_string();
        if text.is_empty() {
            return Err(CoreError::EmptyCaption);
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// The six decoupled representations produced by the agent stage: per-half
/// tags and captions plus the local/global discrepancy descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticBundle {
    pub le_yes: TagSet,
    pub le_but: TagSet,
    pub gs_yes: Caption,
    pub gs_but: Caption,
    pub d_local: String,
    pub d_global: String,
}

impl SemanticBundle {
    /// Union of both halves' tags; the reference the reasoner's subtask-1
    /// output is scored against.
    pub fn reference_tags(&self) -> TagSet {
        self.le_yes.union(&self.le_but)
    }

    /// Both captions joined with a space; the reference for subtask-2.
    pub fn reference_caption(&self) -> Caption {
        Caption::new(format!("{} {}", self.gs_yes.text(), self.gs_but.text()))
            .expect("two non-empty captions join to non-empty text")
    }
}

/// One completed run of the three subtasks at a single temperature, with its
/// uncertainty scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskTrace {
    pub temperature: f64,
    pub r1: TagSet,
    pub r2: Caption,
    pub r3: String,
    /// Negated Jaccard agreement of r1 with the reference tags, in [-1, 0].
    pub u1: f64,
    /// Negated semantic similarity of r2 with the reference caption.
    pub u2: f64,
    /// w1*u1 + w2*u2 with the configured weights.
    pub u_combined: f64,
    pub retry_count: u32,
}

/// Outcome of one temperature's run; failures stay in the list so reports
/// can show them, but they never participate in selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TraceResult {
    Completed(SubtaskTrace),
    Failed { temperature: f64, error: String },
}

impl TraceResult {
    pub fn temperature(&self) -> f64 {
        match self {
            TraceResult::Completed(t) => t.temperature,
            TraceResult::Failed { temperature, .. } => *temperature,
        }
    }

    pub fn as_completed(&self) -> Option<&SubtaskTrace> {
        match self {
            TraceResult::Completed(t) => Some(t),
            TraceResult::Failed { .. } => None,
        }
    }
}

/// Index of the completed trace with minimum `u_combined`. Traces arrive in
/// ascending temperature order, so keeping the first strict minimum breaks
/// ties toward the lowest temperature. `None` when no trace completed.
pub fn select_min_trace(traces: &[TraceResult]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, trace) in traces.iter().enumerate() {
        if let Some(t) = trace.as_completed() {
            match best {
                Some((_, u)) if t.u_combined >= u => {}
                _ => best = Some((i, t.u_combined)),
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the completed trace minimizing a single score component.
pub fn select_min_by(traces: &[TraceResult], score: impl Fn(&SubtaskTrace) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, trace) in traces.iter().enumerate() {
        if let Some(t) = trace.as_completed() {
            let s = score(t);
            match best {
                Some((_, u)) if s >= u => {}
                _ => best = Some((i, s)),
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Everything produced for one sample: the bundle, the per-temperature
/// traces, and which trace was selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub bundle: SemanticBundle,
    pub reference_tags: TagSet,
    pub reference_caption: Caption,
    /// One entry per configured temperature, ascending.
    pub traces: Vec<TraceResult>,
    /// Index into `traces` of the minimum-`u_combined` completed trace.
    pub selected: usize,
    /// Per-score argmin indices, kept for ablation-style analysis.
    pub selected_by_u1: usize,
    pub selected_by_u2: usize,
    /// Wall-clock phase durations. Not serialized: record files must be
    /// byte-identical across repeated runs.
    #[serde(skip)]
    pub timings: BTreeMap<String, Duration>,
}

impl RunRecord {
    /// Assemble a record, computing the selection indices. Errors if no
    /// trace completed.
    pub fn assemble(
        sample_id: impl Into<String>,
        bundle: SemanticBundle,
        traces: Vec<TraceResult>,
        timings: BTreeMap<String, Duration>,
    ) -> Result<Self, CoreError> {
        let selected = select_min_trace(&traces).ok_or(CoreError::NoTraces)?;
        let selected_by_u1 = select_min_by(&traces, |t| t.u1).ok_or(CoreError::NoTraces)?;
        let selected_by_u2 = select_min_by(&traces, |t| t.u2).ok_or(CoreError::NoTraces)?;
        let reference_tags = bundle.reference_tags();
        let reference_caption = bundle.reference_caption();
        Ok(Self {
            sample_id: sample_id.into(),
            bundle,
            reference_tags,
            reference_caption,
            traces,
            selected,
            selected_by_u1,
            selected_by_u2,
            timings,
        })
    }

    pub fn selected_trace(&self) -> &SubtaskTrace {
        self.traces[self.selected]
            .as_completed()
            .expect("selected always indexes a completed trace")
    }
}
