//! Uncertainty scoring and the temperature sweep. U1 is the negated Jaccard
//! agreement between the reasoner's subtask-1 tags and the agents'
//! reference tags; U2 is the negated semantic similarity between subtask-2
//! and the reference caption. The sweep runs the subtasks once per
//! configured temperature and selects the trace minimizing the combined
//! score, ties going to the lowest temperature.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::rng::mix_seed;
use crate::backends::{ClientError, EmbedderClient, ReasonerClient};
use crate::core::{Caption, RunRecord, SemanticBundle, SubtaskTrace, TagSet, TraceResult};
use crate::cot::{run_subtasks, CotPrompt};
use crate::metrics::tokenize;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("cannot compare empty captions")]
    EmptyInput,
    #[error("caption tokenized to nothing: {0:?}")]
    NoTokens(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error("all {count} temperature runs failed for sample '{sample_id}'; first error: {first_error}")]
    AllTracesFailed {
        sample_id: String,
        count: usize,
        first_error: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Cosine of whole-sentence embeddings.
    SentenceCosine,
    /// Greedy token matching F-score: precision is the mean over the
    /// candidate's tokens of the best cosine against the reference's
    /// tokens, recall the symmetric quantity, F their harmonic mean. No
    /// IDF weighting or baseline rescaling.
    TokenGreedyF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_weight")]
    pub w1: f64,
    #[serde(default = "default_weight")]
    pub w2: f64,
    #[serde(default = "default_similarity")]
    pub similarity: SimilarityMode,
}

fn default_temperatures() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0]
}

fn default_weight() -> f64 {
    0.5
}

fn default_similarity() -> SimilarityMode {
    SimilarityMode::TokenGreedyF
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            temperatures: default_temperatures(),
            w1: default_weight(),
            w2: default_weight(),
            similarity: default_similarity(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.temperatures.is_empty() {
            return Err(SweepError::InvalidConfig("temperature grid is empty".into()));
        }
        for window in self.temperatures.windows(2) {
            if window[1] <= window[0] {
                return Err(SweepError::InvalidConfig(format!(
                    "temperatures must be strictly ascending: {} then {}",
                    window[0], window[1]
                )));
            }
        }
        if self.temperatures[0] <= 0.0 {
            return Err(SweepError::InvalidConfig(
                "temperatures must be positive".into(),
            ));
        }
        let highest = *self.temperatures.last().expect("non-empty grid");
        if highest > 2.0 {
            return Err(SweepError::InvalidConfig(format!(
                "temperature {highest} outside the accepted range (0, 2]"
            )));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 || self.w1 + self.w2 <= 0.0 {
            return Err(SweepError::InvalidConfig(format!(
                "weights must be non-negative with a positive sum, got w1={} w2={}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

/// |a ∩ b| / |a ∪ b|, with the both-empty case defined as 1.0 (two empty
/// sets agree perfectly).
pub fn jaccard(a: &TagSet, b: &TagSet) -> f64 {
    let union = a.union_len(b);
    if union == 0 {
        return 1.0;
    }
    a.intersection_len(b) as f64 / union as f64
}

/// Negated Jaccard agreement, in [-1, 0]: -1 is perfect agreement (minimum
/// uncertainty), 0 is disjoint tag sets (maximum uncertainty).
pub fn u1(reference: &TagSet, r1: &TagSet) -> f64 {
    -jaccard(reference, r1)
}

/// Semantic similarity of two captions under the given mode.
pub fn semantic_similarity(
    a: &Caption,
    b: &Caption,
    embedder: &dyn EmbedderClient,
    mode: SimilarityMode,
) -> Result<f64, SimilarityError> {
    match mode {
        SimilarityMode::SentenceCosine => {
            let va = embedder.embed_sentence(a.text())?;
            let vb = embedder.embed_sentence(b.text())?;
            Ok(va.cosine(&vb)?)
        }
        SimilarityMode::TokenGreedyF => {
            if tokenize(a.text()).is_empty() {
                return Err(SimilarityError::NoTokens(a.text().to_string()));
            }
            if tokenize(b.text()).is_empty() {
                return Err(SimilarityError::NoTokens(b.text().to_string()));
            }
            let ta = embedder.embed_tokens(a.text())?;
            let tb = embedder.embed_tokens(b.text())?;
            token_greedy_f(&ta, &tb)
        }
    }
}

fn token_greedy_f(
    a: &[crate::backends::TokenEmbedding],
    b: &[crate::backends::TokenEmbedding],
) -> Result<f64, SimilarityError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimilarityError::EmptyInput);
    }
    let best_against = |tokens: &[crate::backends::TokenEmbedding],
                        others: &[crate::backends::TokenEmbedding]|
     -> Result<f64, SimilarityError> {
        let mut sum = 0.0;
        for t in tokens {
            let mut best = f64::NEG_INFINITY;
            for o in others {
                best = best.max(t.vector.cosine(&o.vector)?);
            }
            sum += best;
        }
        Ok(sum / tokens.len() as f64)
    };
    let precision = best_against(b, a)?;
    let recall = best_against(a, b)?;
    if precision + recall <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Negated semantic similarity of r2 against the reference caption.
pub fn u2(
    reference: &Caption,
    r2: &Caption,
    embedder: &dyn EmbedderClient,
    mode: SimilarityMode,
) -> Result<f64, SimilarityError> {
    Ok(-semantic_similarity(reference, r2, embedder, mode)?)
}

/// Run the subtasks once per configured temperature and assemble the
/// record. A temperature whose run fails (after the parse retry) is kept as
/// a failed trace and excluded from selection; the sweep only errors when
/// every temperature fails.
pub fn sweep(
    sample_id: &str,
    bundle: &SemanticBundle,
    prompt: &CotPrompt,
    reasoner: &dyn ReasonerClient,
    embedder: &dyn EmbedderClient,
    cfg: &SweepConfig,
    global_seed: u64,
) -> Result<RunRecord, SweepError> {
    cfg.validate()?;
    let reference_tags = bundle.reference_tags();
    let reference_caption = bundle.reference_caption();

    let mut timings: BTreeMap<String, std::time::Duration> = BTreeMap::new();
    let total_start = Instant::now();
    let mut traces: Vec<TraceResult> = Vec::with_capacity(cfg.temperatures.len());

    for &temperature in &cfg.temperatures {
        let started = Instant::now();
        let seed = mix_seed(&[
            b"reasoner-seed",
            &global_seed.to_le_bytes(),
            sample_id.as_bytes(),
            &temperature.to_bits().to_le_bytes(),
        ]);
        let outcome = run_subtasks(reasoner, prompt, temperature, Some(seed));
        let trace = match outcome {
            Ok(run) => {
                let u1_score = u1(&reference_tags, &run.response.r1);
                match u2(&reference_caption, &run.response.r2, embedder, cfg.similarity) {
                    Ok(u2_score) => TraceResult::Completed(SubtaskTrace {
                        temperature,
                        r1: run.response.r1,
                        r2: run.response.r2,
                        r3: run.response.r3,
                        u1: u1_score,
                        u2: u2_score,
                        u_combined: cfg.w1 * u1_score + cfg.w2 * u2_score,
                        retry_count: run.retry_count,
                    }),
                    Err(e) => TraceResult::Failed {
                        temperature,
                        error: format!("embedder scoring failed: {e}"),
                    },
                }
            }
            Err(e) => TraceResult::Failed {
                temperature,
                error: format!("reasoner: {e}"),
            },
        };
        timings.insert(format!("trace@{temperature}"), started.elapsed());
        traces.push(trace);
    }
    timings.insert("sweep".to_string(), total_start.elapsed());

    if traces.iter().all(|t| t.as_completed().is_none()) {
        let first_error = traces
            .iter()
            .find_map(|t| match t {
                TraceResult::Failed { error, .. } => Some(error.clone()),
                TraceResult::Completed(_) => None,
            })
            .unwrap_or_default();
        return Err(SweepError::AllTracesFailed {
            sample_id: sample_id.to_string(),
            count: traces.len(),
            first_error,
        });
    }

    Ok(RunRecord::assemble(sample_id, bundle.clone(), traces, timings)
        .expect("at least one completed trace"))
}
