//! From-scratch evaluation engine: n-gram and alignment NLG metrics, an
//! embedding F-score, object-hallucination counts, and corpus aggregation.

mod chair;
mod nlg;
mod report;

pub use chair::{chair, extract_object_mentions, split_sentences, ChairCounts};
pub use nlg::{bleu, embed_f, meteor_lite, rouge_l, stem};
pub use report::{aggregate, CorpusMetrics, MetricReport, SampleMetrics, SkippedSample};

use thiserror::Error;

use crate::uncertainty::SimilarityError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("mention vocabulary is empty")]
    EmptyVocabulary,
    #[error("gold objects missing from mention vocabulary: {0:?}")]
    GoldNotInVocabulary(Vec<String>),
    #[error("cannot aggregate an empty report list")]
    EmptyReports,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Lowercase and split on every non-alphanumeric boundary; punctuation
/// never survives as a token, and hyphens split words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
