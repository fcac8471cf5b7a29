//! Deterministic mock backends. Every output is a pure function of
//! (inputs, seed): fixtures override, otherwise responses are synthesized
//! from a seeded generator, with temperature acting through the same
//! softmax sampler a real decoder would use.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::core::{Caption, ImageRef, TagSet};
use crate::cot::labels;
use crate::metrics::tokenize;

use super::rng::{mix_seed, SplitMix64};
use super::sampling::mock_sample;
use super::{
    check_analyzer_sides, check_embed_text, fixture_key, AnalyzerClient, CaptionerClient,
    ChatRequest, ClientError, DiscrepancyMode, EmbedderClient, EmbeddingVector, MessageRole,
    ReasonerClient, Role, TaggerClient, TokenEmbedding,
};

const TAG_POOL: &[&str] = &[
    "person", "dog", "ball", "tree", "car", "phone", "table", "window", "cup", "book", "cloud",
    "street",
];
const HALLUCINATION_POOL: &[&str] = &["dragon", "ghost", "unicorn"];

/// One scripted response: `key` identifies the input (image id for tagger
/// and captioner, a 16-hex input digest for analyzer and reasoner) and
/// `temperature` must equal the request's exactly (0.0 for the
/// temperature-free roles).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub role: Role,
    pub key: String,
    #[serde(default)]
    pub temperature: f64,
    pub response: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureFile {
    #[serde(default = "default_fixture_version")]
    pub version: String,
    #[serde(default)]
    pub fixtures: Vec<FixtureEntry>,
}

fn default_fixture_version() -> String {
    "1".to_string()
}

impl FixtureFile {
    pub fn load(path: &std::path::Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::invalid_input(format!("cannot read fixture file: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| ClientError::invalid_input(format!("malformed fixture file: {e}")))
    }
}

#[derive(Debug, Default)]
pub struct FixtureIndex {
    entries: BTreeMap<(Role, String, u64), String>,
}

impl FixtureIndex {
    fn from_file(file: &FixtureFile) -> Self {
        let mut entries = BTreeMap::new();
        for e in &file.fixtures {
            entries.insert(
                (e.role, e.key.clone(), e.temperature.to_bits()),
                e.response.clone(),
            );
        }
        Self { entries }
    }

    fn get(&self, role: Role, key: &str, temperature: f64) -> Option<&String> {
        self.entries
            .get(&(role, key.to_string(), temperature.to_bits()))
    }
}

/// Fixture key for an analyzer call.
pub fn analyzer_fixture_key(side_a: &str, side_b: &str, mode: DiscrepancyMode) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"analyzer\0");
    bytes.extend_from_slice(mode.as_str().as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(side_a.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(side_b.as_bytes());
    fixture_key(&bytes)
}

/// Fixture key for a reasoner call: derived from the prompt texts and image
/// ids only, so scripts can be authored before seeds are known.
pub fn reasoner_fixture_key<'a>(
    system_text: &str,
    user_text: &str,
    image_ids: impl IntoIterator<Item = &'a str>,
) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"reasoner\0");
    bytes.extend_from_slice(system_text.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(user_text.as_bytes());
    for id in image_ids {
        bytes.push(0);
        bytes.extend_from_slice(id.as_bytes());
    }
    fixture_key(&bytes)
}

fn request_fixture_key(req: &ChatRequest) -> String {
    let system = req
        .messages
        .iter()
        .find(|m| m.role == MessageRole::System)
        .map(|m| m.text.as_str())
        .unwrap_or("");
    let user = req
        .messages
        .iter()
        .find(|m| m.role == MessageRole::User)
        .map(|m| m.text.as_str())
        .unwrap_or("");
    let ids = req
        .messages
        .iter()
        .flat_map(|m| m.images.iter())
        .map(|i| i.id.as_str());
    reasoner_fixture_key(system, user, ids)
}

/// Failure injection shared by all mocks: the next `n` calls return a
/// transport error, then calls succeed again.
#[derive(Debug, Default)]
struct FailureScript {
    remaining: AtomicU32,
}

impl FailureScript {
    fn arm(&self, n: u32) {
        self.remaining.store(n, Ordering::SeqCst);
    }

    fn check(&self) -> Result<(), ClientError> {
        let mut current = self.remaining.load(Ordering::SeqCst);
        while current > 0 {
            match self.remaining.compare_exchange(
                current,
                current - 1,
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return Err(ClientError::transport("scripted mock failure")),
                Err(actual) => current = actual,
            }
        }
        Ok(())
    }
}

fn pick_pool_words(rng: &mut SplitMix64, pool: &[&str], count: usize) -> Vec<String> {
    let mut picked = Vec::new();
    let mut guard = 0;
    while picked.len() < count && guard < 64 {
        let w = pool[rng.next_index(pool.len())].to_string();
        if !picked.contains(&w) {
            picked.push(w);
        }
        guard += 1;
    }
    picked
}

pub struct MockTagger {
    global_seed: u64,
    model: String,
    fixtures: Arc<FixtureIndex>,
    scripted: BTreeMap<String, String>,
    calls: AtomicU64,
    failures: FailureScript,
    fail_image: Mutex<Option<String>>,
}

impl MockTagger {
    pub fn new(global_seed: u64, fixtures: Arc<FixtureIndex>) -> Self {
        Self {
            global_seed,
            model: "mock-tagger".to_string(),
            fixtures,
            scripted: BTreeMap::new(),
            calls: AtomicU64::new(0),
            failures: FailureScript::default(),
            fail_image: Mutex::new(None),
        }
    }

    pub fn standalone(global_seed: u64) -> Self {
        Self::new(global_seed, Arc::new(FixtureIndex::default()))
    }

    /// Script an exact raw response for an image id, as a backend would
    /// return it (comma/newline separated, un-normalized).
    pub fn with_response(mut self, image_id: impl Into<String>, raw: impl Into<String>) -> Self {
        self.scripted.insert(image_id.into(), raw.into());
        self
    }

    pub fn fail_next(&self, n: u32) {
        self.failures.arm(n);
    }

    /// Fail every call for this specific image id.
    pub fn fail_for_image(&self, image_id: impl Into<String>) {
        *self.fail_image.lock().expect("fail_image mutex") = Some(image_id.into());
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl TaggerClient for MockTagger {
    fn tag_image(&self, image: &ImageRef) -> Result<TagSet, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.failures.check()?;
        if self.fail_image.lock().expect("fail_image mutex").as_deref() == Some(image.id.as_str()) {
            return Err(ClientError::transport("scripted per-image failure"));
        }
        if image.bytes.is_empty() {
            return Err(ClientError::invalid_input("image has no bytes"));
        }
        let raw = if let Some(r) = self.scripted.get(&image.id) {
            r.clone()
        } else if let Some(r) = self.fixtures.get(Role::Tagger, &image.id, 0.0) {
            r.clone()
        } else {
            let mut rng = SplitMix64::new(mix_seed(&[
                &self.global_seed.to_le_bytes(),
                b"tagger",
                image.id.as_bytes(),
            ]));
            let count = 3 + rng.next_index(3);
            pick_pool_words(&mut rng, TAG_POOL, count).join(", ")
        };
        Ok(TagSet::from_delimited(&raw))
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

pub struct MockCaptioner {
    global_seed: u64,
    model: String,
    fixtures: Arc<FixtureIndex>,
    scripted: BTreeMap<String, String>,
    calls: AtomicU64,
    failures: FailureScript,
}

impl MockCaptioner {
    pub fn new(global_seed: u64, fixtures: Arc<FixtureIndex>) -> Self {
        Self {
            global_seed,
            model: "mock-captioner".to_string(),
            fixtures,
            scripted: BTreeMap::new(),
            calls: AtomicU64::new(0),
            failures: FailureScript::default(),
        }
    }

    pub fn standalone(global_seed: u64) -> Self {
        Self::new(global_seed, Arc::new(FixtureIndex::default()))
    }

    pub fn with_response(mut self, image_id: impl Into<String>, raw: impl Into<String>) -> Self {
        self.scripted.insert(image_id.into(), raw.into());
        self
    }

    pub fn fail_next(&self, n: u32) {
        self.failures.arm(n);
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CaptionerClient for MockCaptioner {
    fn caption_image(&self, image: &ImageRef) -> Result<Caption, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.failures.check()?;
        let raw = if let Some(r) = self.scripted.get(&image.id) {
            r.clone()
        } else if let Some(r) = self.fixtures.get(Role::Captioner, &image.id, 0.0) {
            r.clone()
        } else {
            let mut rng = SplitMix64::new(mix_seed(&[
                &self.global_seed.to_le_bytes(),
                b"captioner",
                image.id.as_bytes(),
            ]));
            let words = pick_pool_words(&mut rng, TAG_POOL, 3);
            format!("a scene with {} and a {} near a {}", words[0], words[1], words[2])
        };
        Caption::new(&raw)
            .map_err(|_| ClientError::protocol("captioner returned empty text"))
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

pub struct MockAnalyzer {
    model: String,
    template: String,
    fixtures: Arc<FixtureIndex>,
    calls: AtomicU64,
    failures: FailureScript,
    recorded: Mutex<Vec<(String, String, DiscrepancyMode)>>,
}

impl MockAnalyzer {
    pub fn new(fixtures: Arc<FixtureIndex>) -> Self {
        Self {
            model: "mock-analyzer".to_string(),
            template:
                "the first scene involves {a}, while the second scene involves {b}".to_string(),
            fixtures,
            calls: AtomicU64::new(0),
            failures: FailureScript::default(),
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn standalone() -> Self {
        Self::new(Arc::new(FixtureIndex::default()))
    }

    /// Override the output template; `{a}` and `{b}` expand to the sides.
    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn fail_next(&self, n: u32) {
        self.failures.arm(n);
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Arguments seen so far, for cascade-ordering assertions.
    pub fn recorded_calls(&self) -> Vec<(String, String, DiscrepancyMode)> {
        self.recorded.lock().expect("analyzer mutex").clone()
    }
}

impl AnalyzerClient for MockAnalyzer {
    fn analyze_discrepancy(
        &self,
        side_a: &str,
        side_b: &str,
        mode: DiscrepancyMode,
    ) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.failures.check()?;
        check_analyzer_sides(side_a, side_b)?;
        self.recorded
            .lock()
            .expect("analyzer mutex")
            .push((side_a.to_string(), side_b.to_string(), mode));
        let key = analyzer_fixture_key(side_a, side_b, mode);
        if let Some(r) = self.fixtures.get(Role::Analyzer, &key, 0.0) {
            return Ok(r.clone());
        }
        Ok(self.template.replace("{a}", side_a).replace("{b}", side_b))
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Mock multimodal reasoner. Resolution order: scripted queue, fixture by
/// (prompt key, temperature), then synthesis: echo the prompt's reference
/// tags and caption with temperature-scaled perturbation, so sweeps measure
/// a real effect.
pub struct MockReasoner {
    global_seed: u64,
    model: String,
    fixtures: Arc<FixtureIndex>,
    script: Mutex<std::collections::VecDeque<String>>,
    malform_next: AtomicU32,
    calls: AtomicU64,
    failures: FailureScript,
}

impl MockReasoner {
    pub fn new(global_seed: u64, fixtures: Arc<FixtureIndex>) -> Self {
        Self {
            global_seed,
            model: "mock-reasoner".to_string(),
            fixtures,
            script: Mutex::new(std::collections::VecDeque::new()),
            malform_next: AtomicU32::new(0),
            calls: AtomicU64::new(0),
            failures: FailureScript::default(),
        }
    }

    pub fn standalone(global_seed: u64) -> Self {
        Self::new(global_seed, Arc::new(FixtureIndex::default()))
    }

    /// Respond with these strings in order; the last one repeats once the
    /// queue drains.
    pub fn scripted(global_seed: u64, responses: Vec<String>) -> Self {
        let this = Self::standalone(global_seed);
        *this.script.lock().expect("script mutex") = responses.into();
        this
    }

    /// The next `n` responses drop the SUBTASK2 section, forcing a parse
    /// failure downstream.
    pub fn malform_next(&self, n: u32) {
        self.malform_next.store(n, Ordering::SeqCst);
    }

    pub fn fail_next(&self, n: u32) {
        self.failures.arm(n);
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn synthesize(&self, req: &ChatRequest) -> String {
        let user_text = req
            .messages
            .iter()
            .find(|m| m.role == MessageRole::User)
            .map(|m| m.text.as_str())
            .unwrap_or("");
        let seed = {
            let mut parts: Vec<Vec<u8>> = vec![
                self.global_seed.to_le_bytes().to_vec(),
                b"reasoner".to_vec(),
                request_fixture_key(req).into_bytes(),
                req.temperature.to_bits().to_le_bytes().to_vec(),
            ];
            if let Some(s) = req.seed {
                parts.push(s.to_le_bytes().to_vec());
            }
            let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
            mix_seed(&refs)
        };
        let temp = req.temperature;

        let section = |label: &str| -> Option<String> {
            user_text.lines().find_map(|line| {
                line.trim()
                    .strip_prefix(label)
                    .map(|rest| rest.trim().to_string())
            })
        };

        // Reference tags: union of the two tag sections when present.
        let mut reference_tags: Vec<String> = {
            let joined = [section(labels::LE_YES), section(labels::LE_BUT)]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join(", ");
            TagSet::from_delimited(&joined)
                .iter()
                .filter(|t| *t != "(none)")
                .map(str::to_string)
                .collect()
        };
        if reference_tags.is_empty() {
            let mut rng = SplitMix64::new(mix_seed(&[&seed.to_le_bytes(), b"fallback-tags"]));
            reference_tags = pick_pool_words(&mut rng, TAG_POOL, 3);
        }

        // Reference caption words, in order.
        let caption_text = [section(labels::GS_YES), section(labels::GS_BUT)]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join(" ");
        let mut caption_words: Vec<String> =
            caption_text.split_whitespace().map(str::to_string).collect();
        if caption_words.is_empty() {
            let mut rng = SplitMix64::new(mix_seed(&[&seed.to_le_bytes(), b"fallback-caption"]));
            caption_words = pick_pool_words(&mut rng, TAG_POOL, 4);
        }

        // Keep/drop each reference tag; keep-probability decays with T.
        let mut r1: Vec<String> = reference_tags
            .iter()
            .filter(|tag| {
                let s = mix_seed(&[&seed.to_le_bytes(), b"keep-tag", tag.as_bytes()]);
                mock_sample(&[1.2, 0.0], temp, s).expect("valid logits") == 0
            })
            .cloned()
            .collect();
        if r1.is_empty() {
            r1.push(reference_tags[0].clone());
        }

        // Occasionally hallucinate an extra object; more likely when hot.
        let mut hallucinated: Vec<String> = Vec::new();
        for word in HALLUCINATION_POOL {
            let s = mix_seed(&[&seed.to_le_bytes(), b"hallucinate", word.as_bytes()]);
            if mock_sample(&[0.0, 2.2], temp, s).expect("valid logits") == 0 {
                hallucinated.push((*word).to_string());
            }
        }
        r1.extend(hallucinated.iter().cloned());

        let mut r2_words: Vec<String> = caption_words
            .iter()
            .enumerate()
            .filter(|(i, w)| {
                let s = mix_seed(&[&seed.to_le_bytes(), b"keep-word", &i.to_le_bytes(), w.as_bytes()]);
                mock_sample(&[1.5, 0.0], temp, s).expect("valid logits") == 0
            })
            .map(|(_, w)| w.clone())
            .collect();
        if r2_words.is_empty() {
            r2_words = caption_words.iter().take(2).cloned().collect();
        }

        let d_local = section(labels::D_LOCAL).unwrap_or_else(|| "an unstated contrast".into());
        let mut r3 = format!(
            "The pairing is satirical: {d_local}. The scene highlights {} to mock the situation.",
            r1.join(" and "),
        );
        for h in &hallucinated {
            r3.push_str(&format!(" A {h} looms over everything."));
        }

        format!(
            "{} {}\n{} {}\n{} {}",
            labels::SUBTASK1,
            r1.join(", "),
            labels::SUBTASK2,
            r2_words.join(" "),
            labels::SUBTASK3,
            r3
        )
    }
}

impl ReasonerClient for MockReasoner {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.failures.check()?;
        req.validate()?;

        if let Some(front) = {
            let mut script = self.script.lock().expect("script mutex");
            if script.len() > 1 {
                script.pop_front()
            } else {
                script.front().cloned()
            }
        } {
            return Ok(front);
        }

        let key = request_fixture_key(req);
        let response = match self.fixtures.get(Role::Reasoner, &key, req.temperature) {
            Some(r) => r.clone(),
            None => self.synthesize(req),
        };

        let mut malform = self.malform_next.load(Ordering::SeqCst);
        while malform > 0 {
            match self.malform_next.compare_exchange(
                malform,
                malform - 1,
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => {
                    return Ok(response.replace(labels::SUBTASK2, "GARBLED:"));
                }
                Err(actual) => malform = actual,
            }
        }
        Ok(response)
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Deterministic embedder: one hash-seeded unit vector per distinct token,
/// independent of any run seed so embeddings are stable across processes.
pub struct MockEmbedder {
    model: String,
    dim: usize,
    calls: AtomicU64,
    failures: FailureScript,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(64)
    }
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            model: "mock-embedder".to_string(),
            dim,
            calls: AtomicU64::new(0),
            failures: FailureScript::default(),
        }
    }

    pub fn fail_next(&self, n: u32) {
        self.failures.arm(n);
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn unit_vector(&self, key: &[u8]) -> EmbeddingVector {
        let mut rng = SplitMix64::new(mix_seed(&[b"mock-embed", key]));
        let mut values: Vec<f64> = (0..self.dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values[0] = 1.0;
        }
        EmbeddingVector::new(values).expect("unit vector is non-zero")
    }
}

impl EmbedderClient for MockEmbedder {
    fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.failures.check()?;
        check_embed_text(text)?;
        Ok(self.unit_vector(text.trim().to_lowercase().as_bytes()))
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<TokenEmbedding>, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.failures.check()?;
        check_embed_text(text)?;
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(ClientError::protocol("text tokenized to nothing"));
        }
        Ok(tokens
            .into_iter()
            .map(|token| {
                let vector = self.unit_vector(token.as_bytes());
                TokenEmbedding { token, vector }
            })
            .collect())
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// The full mock backend set built from one global seed and an optional
/// fixture file.
pub struct MockBackends {
    pub tagger: MockTagger,
    pub captioner: MockCaptioner,
    pub analyzer: MockAnalyzer,
    pub reasoner: MockReasoner,
    pub embedder: MockEmbedder,
}

impl MockBackends {
    pub fn new(global_seed: u64, fixtures: Option<&FixtureFile>) -> Self {
        let index = Arc::new(
            fixtures
                .map(FixtureIndex::from_file)
                .unwrap_or_default(),
        );
        Self {
            tagger: MockTagger::new(global_seed, Arc::clone(&index)),
            captioner: MockCaptioner::new(global_seed, Arc::clone(&index)),
            analyzer: MockAnalyzer::new(Arc::clone(&index)),
            reasoner: MockReasoner::new(global_seed, Arc::clone(&index)),
            embedder: MockEmbedder::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ChatMessage;

    fn image(id: &str) -> ImageRef {
        ImageRef::new(id, vec![1, 2, 3], "image/png").unwrap()
    }

    #[test]
    fn scripted_tagger_normalizes_and_dedupes() {
        let tagger = MockTagger::standalone(0).with_response("img_a", "Dog,dog ,cat");
        let tags = tagger.tag_image(&image("img_a")).unwrap();
        assert_eq!(tags.len(), 2);
        assert!(tags.contains("dog"));
        assert!(tags.contains("cat"));
    }

    #[test]
    fn synthesized_outputs_are_deterministic() {
        let a = MockTagger::standalone(7).tag_image(&image("x")).unwrap();
        let b = MockTagger::standalone(7).tag_image(&image("x")).unwrap();
        assert_eq!(a, b);
        let c = MockTagger::standalone(8).tag_image(&image("x")).unwrap();
        assert_ne!(a, c, "different global seeds should usually differ");
    }

    #[test]
    fn captioner_scripted_echo() {
        let cap = MockCaptioner::standalone(0).with_response("img_a", "a man kicks a ball");
        assert_eq!(
            cap.caption_image(&image("img_a")).unwrap().text(),
            "a man kicks a ball"
        );
    }

    #[test]
    fn captioner_rejects_empty_backend_text() {
        let cap = MockCaptioner::standalone(0).with_response("img_a", "   ");
        assert!(matches!(
            cap.caption_image(&image("img_a")),
            Err(ClientError::Protocol(_))
        ));
    }

    #[test]
    fn analyzer_template_and_precondition() {
        let analyzer = MockAnalyzer::standalone().with_template("DIFF({a}|{b})");
        assert_eq!(
            analyzer
                .analyze_discrepancy("cat", "dog", DiscrepancyMode::Local)
                .unwrap(),
            "DIFF(cat|dog)"
        );
        // identical inputs still answer
        assert!(analyzer
            .analyze_discrepancy("same", "same", DiscrepancyMode::Global)
            .is_ok());
        assert!(matches!(
            analyzer.analyze_discrepancy("", "dog", DiscrepancyMode::Local),
            Err(ClientError::InvalidInput(_))
        ));
    }

    #[test]
    fn analyzer_records_arguments() {
        let analyzer = MockAnalyzer::standalone();
        analyzer
            .analyze_discrepancy("a, b", "c", DiscrepancyMode::Local)
            .unwrap();
        let calls = analyzer.recorded_calls();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].0, "a, b");
        assert_eq!(calls[0].2, DiscrepancyMode::Local);
    }

    fn chat_request(text: &str, temperature: f64, seed: Option<u64>) -> ChatRequest {
        ChatRequest {
            messages: vec![
                ChatMessage::system("sys"),
                ChatMessage::user(text, vec![]),
            ],
            temperature,
            max_tokens: 256,
            seed,
        }
    }

    #[test]
    fn reasoner_is_byte_identical_across_runs() {
        let prompt = format!(
            "{} dog, ball\n{} dog, goal\n{} a dog plays\n{} the goal is empty\n",
            labels::LE_YES,
            labels::LE_BUT,
            labels::GS_YES,
            labels::GS_BUT
        );
        let req = chat_request(&prompt, 0.6, Some(11));
        let a = MockReasoner::standalone(3).chat_complete(&req).unwrap();
        let b = MockReasoner::standalone(3).chat_complete(&req).unwrap();
        assert_eq!(a, b);
        assert!(a.contains(labels::SUBTASK1));
        assert!(a.contains(labels::SUBTASK2));
        assert!(a.contains(labels::SUBTASK3));
    }

    #[test]
    fn reasoner_rejects_missing_user_message() {
        let req = ChatRequest {
            messages: vec![ChatMessage::system("sys")],
            temperature: 0.5,
            max_tokens: 16,
            seed: None,
        };
        assert!(matches!(
            MockReasoner::standalone(0).chat_complete(&req),
            Err(ClientError::InvalidInput(_))
        ));
    }

    #[test]
    fn reasoner_low_temperature_echoes_references() {
        let prompt = format!(
            "{} dog, ball, tree\n{} dog, goal, car\n{} a dog plays near a tree\n{} the goal is empty\n",
            labels::LE_YES,
            labels::LE_BUT,
            labels::GS_YES,
            labels::GS_BUT
        );
        let req = chat_request(&prompt, 0.05, None);
        let out = MockReasoner::standalone(3).chat_complete(&req).unwrap();
        let tag_line = out
            .lines()
            .find(|l| l.starts_with(labels::SUBTASK1))
            .unwrap();
        for tag in ["dog", "ball", "tree", "goal", "car"] {
            assert!(tag_line.contains(tag), "missing {tag} in {tag_line}");
        }
    }

    #[test]
    fn reasoner_fixture_override() {
        let prompt = "hello";
        let key = reasoner_fixture_key("sys", prompt, std::iter::empty());
        let file = FixtureFile {
            version: "1".into(),
            fixtures: vec![FixtureEntry {
                role: Role::Reasoner,
                key,
                temperature: 0.4,
                response: "SUBTASK1: x\nSUBTASK2: y\nSUBTASK3: z".into(),
            }],
        };
        let mocks = MockBackends::new(0, Some(&file));
        let out = mocks
            .reasoner
            .chat_complete(&chat_request(prompt, 0.4, None))
            .unwrap();
        assert_eq!(out, "SUBTASK1: x\nSUBTASK2: y\nSUBTASK3: z");
        // different temperature misses the fixture and synthesizes
        let other = mocks
            .reasoner
            .chat_complete(&chat_request(prompt, 0.6, None))
            .unwrap();
        assert_ne!(other, "SUBTASK1: x\nSUBTASK2: y\nSUBTASK3: z");
    }

    #[test]
    fn embedder_is_deterministic_and_self_similar() {
        let embedder = MockEmbedder::default();
        let a = embedder.embed_sentence("x").unwrap();
        let b = embedder.embed_sentence("x").unwrap();
        assert_eq!(a, b);
        assert!((a.cosine(&b).unwrap() - 1.0).abs() < 1e-9);
        assert!(embedder.embed_sentence("  ").is_err());
    }

    #[test]
    fn embedder_same_token_same_vector() {
        let embedder = MockEmbedder::default();
        let toks = embedder.embed_tokens("the cat saw the dog").unwrap();
        assert_eq!(toks.len(), 5);
        assert_eq!(toks[0].vector, toks[3].vector); // both "the"
        assert_ne!(toks[1].vector, toks[4].vector);
    }

    #[test]
    fn failure_script_then_success() {
        let tagger = MockTagger::standalone(0).with_response("i", "dog");
        tagger.fail_next(2);
        assert!(tagger.tag_image(&image("i")).is_err());
        assert!(tagger.tag_image(&image("i")).is_err());
        assert!(tagger.tag_image(&image("i")).is_ok());
        assert_eq!(tagger.calls(), 3);
    }
}
