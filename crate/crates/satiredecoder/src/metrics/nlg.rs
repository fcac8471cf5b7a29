//! N-gram, alignment, and embedding text-similarity metrics.

use std::collections::HashMap;

use crate::backends::EmbedderClient;
use crate::core::Caption;
use crate::uncertainty::{semantic_similarity, SimilarityMode};

use super::{tokenize, MetricsError};

/// Smoothing floor for n-gram precisions that would otherwise be zero
/// (no matches, or no candidate n-grams of that order).
const BLEU_EPSILON: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Geometric mean of clipped n-gram precisions for n = 1..=max_n with a
/// brevity penalty. Zero precisions are floored at 1e-9 rather than
/// collapsing the whole score.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> Result<f64, MetricsError> {
    let ref_tokens = tokenize(reference);
    if ref_tokens.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let cand_tokens = tokenize(candidate);
    if cand_tokens.is_empty() {
        return Ok(0.0);
    }
    let c = cand_tokens.len() as f64;
    let r = ref_tokens.len() as f64;
    let brevity_penalty = if c >= r { 1.0 } else { (1.0 - r / c).exp() };

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand_counts = ngram_counts(&cand_tokens, n);
        let total: usize = cand_counts.values().sum();
        let precision = if total == 0 {
            BLEU_EPSILON
        } else {
            let ref_counts = ngram_counts(&ref_tokens, n);
            let clipped: usize = cand_counts
                .iter()
                .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
            if clipped == 0 {
                BLEU_EPSILON
            } else {
                clipped as f64 / total as f64
            }
        };
        log_sum += precision.ln();
    }
    Ok(brevity_penalty * (log_sum / max_n as f64).exp())
}

/// LCS-based F-measure: P = LCS/|candidate|, R = LCS/|reference|,
/// F = 2PR/(P+R); 0 when the LCS is empty.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64, MetricsError> {
    let ref_tokens = tokenize(reference);
    if ref_tokens.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let cand_tokens = tokenize(candidate);
    if cand_tokens.is_empty() {
        return Ok(0.0);
    }
    let lcs = lcs_length(&cand_tokens, &ref_tokens) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / cand_tokens.len() as f64;
    let r = lcs / ref_tokens.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

pub(crate) fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            current[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(current[j])
            };
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// Suffix-stripping stemmer for the second matching stage: drops one of
/// ing/ed/es/ly/s when at least three characters remain.
pub fn stem(token: &str) -> String {
    for suffix in ["ing", "ed", "es", "ly", "s"] {
        if let Some(stripped) = token.strip_suffix(suffix) {
            if stripped.chars().count() >= 3 {
                return stripped.to_string();
            }
        }
    }
    token.to_string()
}

/// Greedy left-to-right unigram alignment: each candidate token takes the
/// first unmatched reference token its key equals.
fn align_stage(
    cand: &[(usize, String)],
    reference: &[(usize, String)],
    matched_ref: &mut [bool],
    key: impl Fn(&str) -> String,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let ref_keys: Vec<String> = reference.iter().map(|(_, t)| key(t)).collect();
    let mut taken = vec![false; reference.len()];
    for (ci, token) in cand {
        let ck = key(token);
        for (slot, (ri, _)) in reference.iter().enumerate() {
            if !taken[slot] && !matched_ref[*ri] && ref_keys[slot] == ck {
                pairs.push((*ci, *ri));
                taken[slot] = true;
                matched_ref[*ri] = true;
                break;
            }
        }
    }
    pairs
}

fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    let mut chunks = 1;
    for window in pairs.windows(2) {
        let (c0, r0) = window[0];
        let (c1, r1) = window[1];
        if c1 != c0 + 1 || r1 != r0 + 1 {
            chunks += 1;
        }
    }
    chunks
}

/// Unigram-alignment metric with exact-then-stem matching stages,
/// F_mean = 10PR/(R+9P), and fragmentation penalty 0.5*(chunks/matches)^3.
/// No external-lexicon synonym stage.
pub fn meteor_lite(candidate: &str, reference: &str) -> Result<f64, MetricsError> {
    let ref_tokens = tokenize(reference);
    if ref_tokens.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let cand_tokens = tokenize(candidate);
    if cand_tokens.is_empty() {
        return Ok(0.0);
    }

    let enumerated = |tokens: &[String]| -> Vec<(usize, String)> {
        tokens.iter().cloned().enumerate().collect()
    };
    let cand_enum = enumerated(&cand_tokens);
    let ref_enum = enumerated(&ref_tokens);

    let mut matched_ref = vec![false; ref_tokens.len()];
    let exact = align_stage(&cand_enum, &ref_enum, &mut matched_ref, str::to_string);
    let matched_cand: Vec<usize> = exact.iter().map(|(c, _)| *c).collect();
    let remaining_cand: Vec<(usize, String)> = cand_enum
        .iter()
        .filter(|(c, _)| !matched_cand.contains(c))
        .cloned()
        .collect();
    let stemmed = align_stage(&remaining_cand, &ref_enum, &mut matched_ref, stem);

    let mut pairs = exact;
    pairs.extend(stemmed);
    pairs.sort_unstable();
    if pairs.is_empty() {
        return Ok(0.0);
    }

    let matches = pairs.len() as f64;
    let precision = matches / cand_tokens.len() as f64;
    let recall = matches / ref_tokens.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (count_chunks(&pairs) as f64 / matches).powi(3);
    Ok(f_mean * (1.0 - penalty))
}

/// Embedding F-score between generated and reference text. Shares the
/// token-greedy similarity implementation with the uncertainty scoring so
/// there is exactly one implementation with two call sites.
pub fn embed_f(
    candidate: &str,
    reference: &str,
    embedder: &dyn EmbedderClient,
) -> Result<f64, MetricsError> {
    let reference = Caption::new(reference).map_err(|_| MetricsError::EmptyReference)?;
    let candidate = match Caption::new(candidate) {
        Ok(c) => c,
        Err(_) => return Ok(0.0),
    };
    Ok(semantic_similarity(
        &reference,
        &candidate,
        embedder,
        SimilarityMode::TokenGreedyF,
    )?)
}
