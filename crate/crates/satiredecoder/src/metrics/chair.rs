//! Object-hallucination counts: what fraction of mentioned objects, and of
//! sentences, reference objects absent from the gold annotation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{tokenize, MetricsError};

/// Raw hallucination counts for one generated text. Corpus-level ratios are
/// computed from summed counts, never from averaged per-sample ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChairCounts {
    pub hallucinated_objects: usize,
    pub total_objects: usize,
    pub hallucinated_sentences: usize,
    pub total_sentences: usize,
}

impl ChairCounts {
    /// Fraction of mentioned object instances that are hallucinated; absent
    /// when the text mentions no objects at all.
    pub fn chair_i(&self) -> Option<f64> {
        (self.total_objects > 0)
            .then(|| self.hallucinated_objects as f64 / self.total_objects as f64)
    }

    /// Fraction of sentences containing at least one hallucinated object.
    pub fn chair_s(&self) -> Option<f64> {
        (self.total_sentences > 0)
            .then(|| self.hallucinated_sentences as f64 / self.total_sentences as f64)
    }
}

/// Split on sentence terminators; segments that are empty after trimming
/// are dropped, and a trailing unterminated segment counts as a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '?', '!'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Canonical objects whose name or any synonym occurs in the text.
/// Multi-word names match as contiguous token runs.
pub fn extract_object_mentions(
    text: &str,
    vocabulary: &BTreeSet<String>,
    synonyms: &BTreeMap<String, BTreeSet<String>>,
) -> Result<BTreeSet<String>, MetricsError> {
    if vocabulary.is_empty() {
        return Err(MetricsError::EmptyVocabulary);
    }
    let tokens = tokenize(text);
    let mut mentions = BTreeSet::new();
    for object in vocabulary {
        let mut surfaces: Vec<&str> = vec![object.as_str()];
        if let Some(aliases) = synonyms.get(object) {
            surfaces.extend(aliases.iter().map(String::as_str));
        }
        let hit = surfaces.iter().any(|surface| {
            let phrase = tokenize(surface);
            !phrase.is_empty() && contains_run(&tokens, &phrase)
        });
        if hit {
            mentions.insert(object.clone());
        }
    }
    Ok(mentions)
}

fn contains_run(tokens: &[String], phrase: &[String]) -> bool {
    tokens.len() >= phrase.len() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

/// Count object mentions per sentence (one per distinct canonical object
/// per sentence) and how many of them fall outside the gold set.
pub fn chair(
    generated: &str,
    gold_objects: &BTreeSet<String>,
    mention_vocabulary: &BTreeSet<String>,
    synonyms: &BTreeMap<String, BTreeSet<String>>,
) -> Result<ChairCounts, MetricsError> {
    if mention_vocabulary.is_empty() {
        return Err(MetricsError::EmptyVocabulary);
    }
    let missing: Vec<String> = gold_objects
        .difference(mention_vocabulary)
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::GoldNotInVocabulary(missing));
    }

    let mut counts = ChairCounts::default();
    for sentence in split_sentences(generated) {
        counts.total_sentences += 1;
        let mentions = extract_object_mentions(&sentence, mention_vocabulary, synonyms)?;
        counts.total_objects += mentions.len();
        let hallucinated = mentions.iter().filter(|m| !gold_objects.contains(*m)).count();
        counts.hallucinated_objects += hallucinated;
        if hallucinated > 0 {
            counts.hallucinated_sentences += 1;
        }
    }
    Ok(counts)
}
