//! HTTP clients for the wire protocol documented in `docs/protocol.md`:
//! POST a JSON body of messages/temperature/max_tokens/seed (images inline
//! as base64 data URLs), receive `{"text": "..."}` back. The tagger,
//! captioner, and analyzer speak the same protocol with role-specific
//! instruction preambles, so any compatible endpoint can fill any role.
//!
//! These clients do not retry; compose with [`super::retry::Retrying`].

use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use crate::core::{Caption, ImageRef, TagSet};

use super::{
    check_analyzer_sides, check_embed_text, AnalyzerClient, BackendConfig, CaptionerClient,
    ChatRequest, ClientError, DiscrepancyMode, EmbedderClient, EmbeddingVector, MessageRole,
    ReasonerClient, TaggerClient, TokenEmbedding,
};

/// Instruction preambles sent as the system message when a generic chat
/// endpoint plays a fixed-function role. Documented in `docs/prompts.md`;
/// keep the two in sync.
pub const TAGGER_PREAMBLE: &str = "You are an image tagging service. List the distinct objects \
visible in the attached image as a comma-separated list of short lowercase noun phrases. \
Output only the list, nothing else.";

pub const CAPTIONER_PREAMBLE: &str = "You are an image captioning service. Describe the scene \
in the attached image in one plain-language sentence. Output only the caption, nothing else.";

pub const ANALYZER_PREAMBLE: &str = "You compare two descriptions of paired scenes and state \
the notable discrepancies, contradictions, or incongruities between them in one or two \
sentences. Output only the discrepancy description.";

fn data_url(image: &ImageRef) -> String {
    format!("data:{};base64,{}", image.media_type, BASE64.encode(&image.bytes))
}

fn agent(config: &BackendConfig) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout(config.timeout())
        .build()
}

/// POST `body` to the configured endpoint and return the parsed JSON.
fn post_json(config: &BackendConfig, body: &Value) -> Result<Value, ClientError> {
    let started = Instant::now();
    let mut request = agent(config).post(&config.base_url);
    if let Some(key) = &config.api_key {
        request = request.set("Authorization", &format!("Bearer {key}"));
    }
    match request.send_json(body.clone()) {
        Ok(response) => response.into_json::<Value>().map_err(|e| {
            ClientError::protocol(format!("response body is not valid JSON: {e}"))
        }),
        Err(ureq::Error::Status(status, response)) => {
            let message = response
                .into_string()
                .unwrap_or_else(|_| "<unreadable body>".to_string());
            Err(ClientError::Backend { status, message })
        }
        Err(ureq::Error::Transport(t)) => Err(ClientError::Transport {
            message: t.to_string(),
            attempts: 1,
            elapsed: Some(started.elapsed()),
        }),
    }
}

fn text_field(value: &Value) -> Result<String, ClientError> {
    value
        .get("text")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ClientError::protocol("response is missing the \"text\" field"))
}

fn chat_body(config: &BackendConfig, req: &ChatRequest) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                MessageRole::System => "system",
                MessageRole::User => "user",
            };
            let mut msg = json!({"role": role, "text": m.text});
            if !m.images.is_empty() {
                msg["images"] = Value::Array(
                    m.images.iter().map(|i| Value::String(data_url(i))).collect(),
                );
            }
            msg
        })
        .collect();
    let mut body = json!({
        "model": config.model_name,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if let Some(seed) = req.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// One chat round-trip for a fixed-function role: preamble + user text +
/// image, temperature pinned to a deterministic low value.
fn fixed_role_call(
    config: &BackendConfig,
    preamble: &str,
    user_text: &str,
    images: Vec<ImageRef>,
) -> Result<String, ClientError> {
    let req = ChatRequest {
        messages: vec![
            super::ChatMessage::system(preamble),
            super::ChatMessage::user(user_text, images),
        ],
        temperature: 0.1,
        max_tokens: 512,
        seed: Some(0),
    };
    text_field(&post_json(config, &chat_body(config, &req))?)
}

pub struct HttpTagger {
    config: BackendConfig,
}

impl HttpTagger {
    pub fn new(config: BackendConfig) -> Self {
        Self { config }
    }
}

impl TaggerClient for HttpTagger {
    fn tag_image(&self, image: &ImageRef) -> Result<TagSet, ClientError> {
        let text = fixed_role_call(
            &self.config,
            TAGGER_PREAMBLE,
            "Tag the objects in this image.",
            vec![image.clone()],
        )?;
        Ok(TagSet::from_delimited(&text))
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }
}

pub struct HttpCaptioner {
    config: BackendConfig,
}

impl HttpCaptioner {
    pub fn new(config: BackendConfig) -> Self {
        Self { config }
    }
}

impl CaptionerClient for HttpCaptioner {
    fn caption_image(&self, image: &ImageRef) -> Result<Caption, ClientError> {
        let text = fixed_role_call(
            &self.config,
            CAPTIONER_PREAMBLE,
            "Caption this image.",
            vec![image.clone()],
        )?;
        Caption::new(&text).map_err(|_| ClientError::protocol("captioner returned empty text"))
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }
}

pub struct HttpAnalyzer {
    config: BackendConfig,
}

impl HttpAnalyzer {
    pub fn new(config: BackendConfig) -> Self {
        Self { config }
    }
}

impl AnalyzerClient for HttpAnalyzer {
    fn analyze_discrepancy(
        &self,
        side_a: &str,
        side_b: &str,
        mode: DiscrepancyMode,
    ) -> Result<String, ClientError> {
        check_analyzer_sides(side_a, side_b)?;
        let user_text = format!(
            "First scene ({level}): {side_a}\nSecond scene ({level}): {side_b}\nDescribe the discrepancies.",
            level = mode.as_str(),
        );
        let text = fixed_role_call(&self.config, ANALYZER_PREAMBLE, &user_text, vec![])?;
        if text.trim().is_empty() {
            return Err(ClientError::protocol("analyzer returned empty text"));
        }
        Ok(text)
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }
}

pub struct HttpReasoner {
    config: BackendConfig,
}

impl HttpReasoner {
    pub fn new(config: BackendConfig) -> Self {
        Self { config }
    }
}

impl ReasonerClient for HttpReasoner {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, ClientError> {
        req.validate()?;
        text_field(&post_json(&self.config, &chat_body(&self.config, req))?)
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }
}

pub struct HttpEmbedder {
    config: BackendConfig,
}

impl HttpEmbedder {
    pub fn new(config: BackendConfig) -> Self {
        Self { config }
    }

    fn parse_vector(value: &Value) -> Result<EmbeddingVector, ClientError> {
        let raw = value
            .as_array()
            .ok_or_else(|| ClientError::protocol("embedding is not an array"))?;
        let values: Result<Vec<f64>, ClientError> = raw
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| ClientError::protocol("embedding value is not a number"))
            })
            .collect();
        EmbeddingVector::new(values?)
    }
}

impl EmbedderClient for HttpEmbedder {
    fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        check_embed_text(text)?;
        let body = json!({"model": self.config.model_name, "input": text, "granularity": "sentence"});
        let value = post_json(&self.config, &body)?;
        let embedding = value
            .get("embedding")
            .ok_or_else(|| ClientError::protocol("response is missing \"embedding\""))?;
        Self::parse_vector(embedding)
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<TokenEmbedding>, ClientError> {
        check_embed_text(text)?;
        let body = json!({"model": self.config.model_name, "input": text, "granularity": "tokens"});
        let value = post_json(&self.config, &body)?;
        let tokens = value
            .get("tokens")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::protocol("response is missing \"tokens\""))?;
        tokens
            .iter()
            .map(|entry| {
                let token = entry
                    .get("token")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ClientError::protocol("token entry missing \"token\""))?
                    .to_string();
                let vector = Self::parse_vector(
                    entry
                        .get("embedding")
                        .ok_or_else(|| ClientError::protocol("token entry missing \"embedding\""))?,
                )?;
                Ok(TokenEmbedding { token, vector })
            })
            .collect()
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }
}
