//! Caching wrappers around the role clients. Agent outputs are keyed by a
//! digest of the canonical request bytes so re-runs (and temperature sweeps,
//! which only vary the reasoner) reuse agent outputs byte-for-byte.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::backends::{
    AnalyzerClient, CaptionerClient, ChatRequest, ClientError, DiscrepancyMode, ReasonerClient,
    Role, TaggerClient,
};
use crate::core::{Caption, ImageRef, TagSet};

use super::cache::{CacheError, CacheKey, FileCache};

fn digest_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_failure(e: CacheError) -> ClientError {
    ClientError::protocol(format!("cache: {e}"))
}

/// Hit/miss counters for one wrapped role.
#[derive(Debug, Default)]
pub struct CacheStats {
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CacheStats {
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn record(&self, hit: bool) {
        if hit {
            self.hits.fetch_add(1, Ordering::SeqCst);
        } else {
            self.misses.fetch_add(1, Ordering::SeqCst);
        }
    }
}

fn cached_call(
    cache: &FileCache,
    stats: &CacheStats,
    key: &CacheKey,
    fetch: impl FnOnce() -> Result<Vec<u8>, ClientError>,
) -> Result<Vec<u8>, ClientError> {
    if let Some(bytes) = cache.get(key).map_err(cache_failure)? {
        stats.record(true);
        return Ok(bytes);
    }
    stats.record(false);
    let bytes = fetch()?;
    cache.put(key, &bytes).map_err(cache_failure)?;
    Ok(bytes)
}

pub struct CachedTagger<C> {
    inner: C,
    cache: Arc<FileCache>,
    pub stats: Arc<CacheStats>,
}

impl<C: TaggerClient> CachedTagger<C> {
    pub fn new(inner: C, cache: Arc<FileCache>) -> Self {
        Self {
            inner,
            cache,
            stats: Arc::new(CacheStats::default()),
        }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: TaggerClient> TaggerClient for CachedTagger<C> {
    fn tag_image(&self, image: &ImageRef) -> Result<TagSet, ClientError> {
        let key = CacheKey {
            role: Role::Tagger,
            model_name: self.inner.model_name().to_string(),
            input_digest: digest_hex(&[
                b"tagger",
                self.inner.model_name().as_bytes(),
                image.id.as_bytes(),
                &Sha256::digest(&image.bytes),
            ]),
            temperature: 0.0,
        };
        let bytes = cached_call(&self.cache, &self.stats, &key, || {
            let tags = self.inner.tag_image(image)?;
            serde_json::to_vec(&tags).map_err(|e| ClientError::protocol(e.to_string()))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| ClientError::protocol(format!("corrupt cache entry: {e}")))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

pub struct CachedCaptioner<C> {
    inner: C,
    cache: Arc<FileCache>,
    pub stats: Arc<CacheStats>,
}

impl<C: CaptionerClient> CachedCaptioner<C> {
    pub fn new(inner: C, cache: Arc<FileCache>) -> Self {
        Self {
            inner,
            cache,
            stats: Arc::new(CacheStats::default()),
        }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: CaptionerClient> CaptionerClient for CachedCaptioner<C> {
    fn caption_image(&self, image: &ImageRef) -> Result<Caption, ClientError> {
        let key = CacheKey {
            role: Role::Captioner,
            model_name: self.inner.model_name().to_string(),
            input_digest: digest_hex(&[
                b"captioner",
                self.inner.model_name().as_bytes(),
                image.id.as_bytes(),
                &Sha256::digest(&image.bytes),
            ]),
            temperature: 0.0,
        };
        let bytes = cached_call(&self.cache, &self.stats, &key, || {
            let caption = self.inner.caption_image(image)?;
            Ok(caption.text().as_bytes().to_vec())
        })?;
        let text = String::from_utf8(bytes)
            .map_err(|e| ClientError::protocol(format!("corrupt cache entry: {e}")))?;
        Caption::new(&text).map_err(|e| ClientError::protocol(format!("corrupt cache entry: {e}")))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

pub struct CachedAnalyzer<C> {
    inner: C,
    cache: Arc<FileCache>,
    pub stats: Arc<CacheStats>,
}

impl<C: AnalyzerClient> CachedAnalyzer<C> {
    pub fn new(inner: C, cache: Arc<FileCache>) -> Self {
        Self {
            inner,
            cache,
            stats: Arc::new(CacheStats::default()),
        }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: AnalyzerClient> AnalyzerClient for CachedAnalyzer<C> {
    fn analyze_discrepancy(
        &self,
        side_a: &str,
        side_b: &str,
        mode: DiscrepancyMode,
    ) -> Result<String, ClientError> {
        let key = CacheKey {
            role: Role::Analyzer,
            model_name: self.inner.model_name().to_string(),
            input_digest: digest_hex(&[
                b"analyzer",
                self.inner.model_name().as_bytes(),
                mode.as_str().as_bytes(),
                side_a.as_bytes(),
                side_b.as_bytes(),
            ]),
            temperature: 0.0,
        };
        let bytes = cached_call(&self.cache, &self.stats, &key, || {
            Ok(self
                .inner
                .analyze_discrepancy(side_a, side_b, mode)?
                .into_bytes())
        })?;
        String::from_utf8(bytes)
            .map_err(|e| ClientError::protocol(format!("corrupt cache entry: {e}")))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

pub struct CachedReasoner<C> {
    inner: C,
    cache: Arc<FileCache>,
    pub stats: Arc<CacheStats>,
}

impl<C: ReasonerClient> CachedReasoner<C> {
    pub fn new(inner: C, cache: Arc<FileCache>) -> Self {
        Self {
            inner,
            cache,
            stats: Arc::new(CacheStats::default()),
        }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: ReasonerClient> ReasonerClient for CachedReasoner<C> {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, ClientError> {
        let key = CacheKey {
            role: Role::Reasoner,
            model_name: self.inner.model_name().to_string(),
            input_digest: digest_hex(&[
                b"reasoner",
                self.inner.model_name().as_bytes(),
                &req.canonical_bytes(),
            ]),
            temperature: req.temperature,
        };
        let bytes = cached_call(&self.cache, &self.stats, &key, || {
            Ok(self.inner.chat_complete(req)?.into_bytes())
        })?;
        String::from_utf8(bytes)
            .map_err(|e| ClientError::protocol(format!("corrupt cache entry: {e}")))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}
