//! Per-sample metric rows and corpus aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChairCounts, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub embed_f: f64,
    pub chair: ChairCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub embed_f: f64,
    /// Arithmetic mean of the four NLG metrics above.
    pub ave: f64,
    /// Micro-averaged: summed counts, not averaged per-sample ratios.
    pub chair_i: Option<f64>,
    pub chair_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: String,
    pub per_sample: BTreeMap<String, SampleMetrics>,
    pub corpus: CorpusMetrics,
    #[serde(default)]
    pub skipped: Vec<SkippedSample>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    values.sum::<f64>() / count as f64
}

/// Corpus NLG metrics are arithmetic means over samples; AVE is the mean of
/// the four corpus NLG values; CHAIR ratios come from summed counts.
pub fn aggregate(per_sample: &BTreeMap<String, SampleMetrics>) -> Result<CorpusMetrics, MetricsError> {
    if per_sample.is_empty() {
        return Err(MetricsError::EmptyReports);
    }
    let n = per_sample.len();
    let bleu = mean(per_sample.values().map(|s| s.bleu), n);
    let rouge_l = mean(per_sample.values().map(|s| s.rouge_l), n);
    let meteor = mean(per_sample.values().map(|s| s.meteor), n);
    let embed_f = mean(per_sample.values().map(|s| s.embed_f), n);
    let ave = (bleu + rouge_l + meteor + embed_f) / 4.0;

    let sum_h_o: usize = per_sample.values().map(|s| s.chair.hallucinated_objects).sum();
    let sum_num_o: usize = per_sample.values().map(|s| s.chair.total_objects).sum();
    let sum_h_s: usize = per_sample.values().map(|s| s.chair.hallucinated_sentences).sum();
    let sum_num_s: usize = per_sample.values().map(|s| s.chair.total_sentences).sum();

    Ok(CorpusMetrics {
        bleu,
        rouge_l,
        meteor,
        embed_f,
        ave,
        chair_i: (sum_num_o > 0).then(|| sum_h_o as f64 / sum_num_o as f64),
        chair_s: (sum_num_s > 0).then(|| sum_h_s as f64 / sum_num_s as f64),
    })
}
