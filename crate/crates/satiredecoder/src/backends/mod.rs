//! Pluggable clients for the four model roles (tagger, captioner,
//! discrepancy analyzer, reasoner) plus an embedding provider, over one
//! chat-completion-style wire protocol, with deterministic mock
//! implementations for offline runs.

mod http;
mod mock;
pub mod retry;
pub mod rng;
pub mod sampling;

pub use http::{
    HttpAnalyzer, HttpCaptioner, HttpEmbedder, HttpReasoner, HttpTagger, ANALYZER_PREAMBLE,
    CAPTIONER_PREAMBLE, TAGGER_PREAMBLE,
};
pub use mock::{
    analyzer_fixture_key, reasoner_fixture_key, FixtureEntry, FixtureFile, MockAnalyzer,
    MockBackends, MockCaptioner, MockEmbedder, MockReasoner, MockTagger,
};
pub use sampling::{mock_sample, shannon_entropy, softmax_with_temperature};

/// The four cacheable model roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tagger,
    Captioner,
    Analyzer,
    Reasoner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Tagger => "tagger",
            Role::Captioner => "captioner",
            Role::Analyzer => "analyzer",
            Role::Reasoner => "reasoner",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::core::{Caption, ImageRef, TagSet};

#[derive(Debug, Error)]
pub enum ClientError {
    /// Network-level failure (unreachable host, timeout) after all retries.
    #[error("transport error after {attempts} attempt(s){}: {message}", elapsed_suffix(.elapsed))]
    Transport {
        message: String,
        attempts: u32,
        elapsed: Option<Duration>,
    },
    /// The backend answered, but not in the shape the protocol requires.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Non-2xx response carrying the backend's own message.
    #[error("backend error (status {status}): {message}")]
    Backend { status: u16, message: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn elapsed_suffix(elapsed: &Option<Duration>) -> String {
    match elapsed {
        Some(d) => format!(" after {:.2}s", d.as_secs_f64()),
        None => String::new(),
    }
}

impl ClientError {
    pub fn invalid_input(message: impl Into<String>) -> Self {
        ClientError::InvalidInput(message.into())
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        ClientError::Protocol(message.into())
    }

    pub fn transport(message: impl Into<String>) -> Self {
        ClientError::Transport {
            message: message.into(),
            attempts: 1,
            elapsed: None,
        }
    }

    /// Transient errors are worth retrying; invalid input and protocol
    /// violations are not.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Transport { .. } => true,
            ClientError::Backend { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Connection settings for one backend role.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    pub model_name: String,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Initial backoff in seconds; doubles on each retry.
    #[serde(default = "default_retry_backoff_secs")]
    pub retry_backoff_secs: f64,
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_retry_backoff_secs() -> f64 {
    1.0
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn retry_backoff(&self) -> Duration {
        Duration::from_secs_f64(self.retry_backoff_secs)
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout_secs <= 0.0 {
            return Err(ClientError::invalid_input("timeout must be > 0"));
        }
        if self.retry_backoff_secs < 0.0 {
            return Err(ClientError::invalid_input("retry backoff must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub text: String,
    /// Images attach to user messages as base64 data URLs on the wire.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>, images: Vec<ImageRef>) -> Self {
        Self {
            role: MessageRole::User,
            text: text.into(),
            images,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !self.messages.iter().any(|m| m.role == MessageRole::User) {
            return Err(ClientError::invalid_input(
                "request must contain at least one user message",
            ));
        }
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(ClientError::invalid_input(format!(
                "temperature {} outside accepted range (0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Canonical bytes for digests and fixture keys: stable JSON of the
    /// request with image payloads replaced by their ids and digests.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in &self.messages {
            out.extend_from_slice(match m.role {
                MessageRole::System => b"system\0",
                MessageRole::User => b"user\0",
            });
            out.extend_from_slice(m.text.as_bytes());
            out.push(0);
            for img in &m.images {
                out.extend_from_slice(img.id.as_bytes());
                out.push(0);
                out.extend_from_slice(&Sha256::digest(&img.bytes));
            }
            out.push(0);
        }
        out.extend_from_slice(&self.temperature.to_le_bytes());
        out.extend_from_slice(&self.max_tokens.to_le_bytes());
        if let Some(seed) = self.seed {
            out.extend_from_slice(&seed.to_le_bytes());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscrepancyMode {
    Local,
    Global,
}

impl DiscrepancyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscrepancyMode::Local => "local",
            DiscrepancyMode::Global => "global",
        }
    }
}

/// Fixed-dimension embedding; never all-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dim: usize,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ClientError> {
        let dim = values.len();
        if dim == 0 {
            return Err(ClientError::protocol("embedding has zero dimension"));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(ClientError::protocol("embedding is all-zero"));
        }
        Ok(Self { values, dim })
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, ClientError> {
        if self.dim != other.dim {
            return Err(ClientError::invalid_input(format!(
                "embedding dimension mismatch: {} vs {}",
                self.dim, other.dim
            )));
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let na: f64 = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(ClientError::protocol("zero-norm embedding"));
        }
        Ok(dot / (na * nb))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbedding {
    pub token: String,
    pub vector: EmbeddingVector,
}

/// Local entity extraction: object tags for one image.
pub trait TaggerClient: Send + Sync {
    fn tag_image(&self, image: &ImageRef) -> Result<TagSet, ClientError>;
    fn model_name(&self) -> &str;
}

/// Global semantics extraction: a caption for one image.
pub trait CaptionerClient: Send + Sync {
    fn caption_image(&self, image: &ImageRef) -> Result<Caption, ClientError>;
    fn model_name(&self) -> &str;
}

/// Discrepancy analysis over two rendered sides.
pub trait AnalyzerClient: Send + Sync {
    fn analyze_discrepancy(
        &self,
        side_a: &str,
        side_b: &str,
        mode: DiscrepancyMode,
    ) -> Result<String, ClientError>;
    fn model_name(&self) -> &str;
}

/// The multimodal reasoner performing the three subtasks.
pub trait ReasonerClient: Send + Sync {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, ClientError>;
    fn model_name(&self) -> &str;
}

/// Text embeddings at sentence or token granularity.
pub trait EmbedderClient: Send + Sync {
    fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector, ClientError>;
    fn embed_tokens(&self, text: &str) -> Result<Vec<TokenEmbedding>, ClientError>;
    fn model_name(&self) -> &str;
}

impl<T: TaggerClient + ?Sized> TaggerClient for Box<T> {
    fn tag_image(&self, image: &ImageRef) -> Result<TagSet, ClientError> {
        (**self).tag_image(image)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: CaptionerClient + ?Sized> CaptionerClient for Box<T> {
    fn caption_image(&self, image: &ImageRef) -> Result<Caption, ClientError> {
        (**self).caption_image(image)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: AnalyzerClient + ?Sized> AnalyzerClient for Box<T> {
    fn analyze_discrepancy(
        &self,
        side_a: &str,
        side_b: &str,
        mode: DiscrepancyMode,
    ) -> Result<String, ClientError> {
        (**self).analyze_discrepancy(side_a, side_b, mode)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: ReasonerClient + ?Sized> ReasonerClient for Box<T> {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, ClientError> {
        (**self).chat_complete(req)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: EmbedderClient + ?Sized> EmbedderClient for Box<T> {
    fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        (**self).embed_sentence(text)
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<TokenEmbedding>, ClientError> {
        (**self).embed_tokens(text)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

/// Shared precondition for analyzer calls: sides must be non-empty (tag
/// sets render as "(none)" rather than empty strings).
pub(crate) fn check_analyzer_sides(side_a: &str, side_b: &str) -> Result<(), ClientError> {
    if side_a.trim().is_empty() || side_b.trim().is_empty() {
        return Err(ClientError::invalid_input(
            "analyzer sides must be non-empty; render empty tag sets as \"(none)\"",
        ));
    }
    Ok(())
}

/// Shared precondition for embedding calls.
pub(crate) fn check_embed_text(text: &str) -> Result<(), ClientError> {
    if text.trim().is_empty() {
        return Err(ClientError::invalid_input("cannot embed empty text"));
    }
    Ok(())
}

/// Hex digest of arbitrary input bytes; the first 16 chars key mock
/// fixtures, the full digest keys the response cache.
pub fn input_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

pub fn fixture_key(bytes: &[u8]) -> String {
    input_digest(bytes)[..16].to_string()
}
