//! End-to-end run machinery: assemble the configured clients (mock or
//! HTTP, each behind retry and cache layers), process samples through
//! decouple -> prompt -> sweep on a bounded worker pool, and write one
//! record file per sample plus a run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::backends::retry::{RetryCounters, RetryPolicy, Retrying};
use crate::backends::{
    AnalyzerClient, CaptionerClient, EmbedderClient, FixtureFile, HttpAnalyzer, HttpCaptioner,
    HttpEmbedder, HttpReasoner, HttpTagger, MockBackends, ReasonerClient, Role, TaggerClient,
};
use crate::core::{ImageSample, RunRecord};
use crate::cot::{build_prompt_with, CotPrompt, PromptSections, PromptTemplate};
use crate::dataset::{
    CacheStats, CachedAnalyzer, CachedCaptioner, CachedReasoner, CachedTagger, FileCache,
};
use crate::decouple::{decouple, parallel_map, DEFAULT_AGENT_PARALLELISM};
use crate::uncertainty::{sweep, SweepConfig};

use super::config::{AppConfig, RoleBackend};
use super::logging::Logger;
use super::CliError;

pub const RUN_MANIFEST_NAME: &str = "run_manifest.json";
pub const RECORDS_DIR: &str = "records";
pub const PROMPTS_DIR: &str = "prompts";
/// Temperature used when the sweep is disabled.
pub const SINGLE_TEMPERATURE: f64 = 0.6;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunFlags {
    pub dry_run: bool,
    pub no_uncertainty: bool,
    pub no_le: bool,
    pub no_gs: bool,
    pub no_da: bool,
}

impl RunFlags {
    pub fn sections(&self) -> PromptSections {
        PromptSections {
            le: !self.no_le,
            gs: !self.no_gs,
            da: !self.no_da,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunStats {
    /// Calls that reached each backend (cache misses).
    pub backend_calls: BTreeMap<String, u64>,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub embedder_calls: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub samples: Vec<SampleEntry>,
    pub stats: RunStats,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

/// The assembled client stack plus the counter handles that survive
/// boxing.
pub(crate) struct Clients {
    pub tagger: Box<dyn TaggerClient>,
    pub captioner: Box<dyn CaptionerClient>,
    pub analyzer: Box<dyn AnalyzerClient>,
    pub reasoner: Box<dyn ReasonerClient>,
    pub embedder: Box<dyn EmbedderClient>,
    tagger_stats: Arc<CacheStats>,
    captioner_stats: Arc<CacheStats>,
    analyzer_stats: Arc<CacheStats>,
    reasoner_stats: Option<Arc<CacheStats>>,
    reasoner_counters: Arc<RetryCounters>,
    embedder_counters: Arc<RetryCounters>,
}

impl Clients {
    pub(crate) fn stats(&self) -> RunStats {
        let mut backend_calls = BTreeMap::new();
        backend_calls.insert(Role::Tagger.to_string(), self.tagger_stats.misses());
        backend_calls.insert(Role::Captioner.to_string(), self.captioner_stats.misses());
        backend_calls.insert(Role::Analyzer.to_string(), self.analyzer_stats.misses());
        backend_calls.insert(
            Role::Reasoner.to_string(),
            match &self.reasoner_stats {
                Some(stats) => stats.misses(),
                None => self.reasoner_counters.total_calls(),
            },
        );
        let hits = [
            Some(&self.tagger_stats),
            Some(&self.captioner_stats),
            Some(&self.analyzer_stats),
            self.reasoner_stats.as_ref(),
        ];
        RunStats {
            backend_calls,
            cache_hits: hits.iter().flatten().map(|s| s.hits()).sum(),
            cache_misses: hits.iter().flatten().map(|s| s.misses()).sum(),
            embedder_calls: self.embedder_counters.total_calls(),
        }
    }
}

fn mock_policy() -> RetryPolicy {
    RetryPolicy {
        max_retries: 2,
        initial_backoff: std::time::Duration::ZERO,
    }
}

fn http_policy(config: &crate::backends::BackendConfig) -> RetryPolicy {
    RetryPolicy {
        max_retries: config.max_retries,
        initial_backoff: config.retry_backoff(),
    }
}

pub(crate) fn build_clients(config: &AppConfig) -> Result<Clients, CliError> {
    let fixtures = config
        .backends
        .fixtures
        .as_ref()
        .map(|path| FixtureFile::load(path))
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mocks = MockBackends::new(config.global_seed, fixtures.as_ref());
    let MockBackends {
        tagger: mock_tagger,
        captioner: mock_captioner,
        analyzer: mock_analyzer,
        reasoner: mock_reasoner,
        embedder: mock_embedder,
    } = mocks;

    let cache = Arc::new(FileCache::new(config.cache_dir()));

    let tagger = {
        let boxed: Retrying<Box<dyn TaggerClient>> = match &config.backends.tagger {
            RoleBackend::Named(_) => Retrying::new(Box::new(mock_tagger), mock_policy()),
            RoleBackend::Http(c) => Retrying::new(Box::new(HttpTagger::new(c.clone())), http_policy(c)),
        };
        CachedTagger::new(boxed, Arc::clone(&cache))
    };
    let tagger_stats = Arc::clone(&tagger.stats);

    let captioner = {
        let boxed: Retrying<Box<dyn CaptionerClient>> = match &config.backends.captioner {
            RoleBackend::Named(_) => Retrying::new(Box::new(mock_captioner), mock_policy()),
            RoleBackend::Http(c) => {
                Retrying::new(Box::new(HttpCaptioner::new(c.clone())), http_policy(c))
            }
        };
        CachedCaptioner::new(boxed, Arc::clone(&cache))
    };
    let captioner_stats = Arc::clone(&captioner.stats);

    let analyzer = {
        let boxed: Retrying<Box<dyn AnalyzerClient>> = match &config.backends.analyzer {
            RoleBackend::Named(_) => Retrying::new(Box::new(mock_analyzer), mock_policy()),
            RoleBackend::Http(c) => {
                Retrying::new(Box::new(HttpAnalyzer::new(c.clone())), http_policy(c))
            }
        };
        CachedAnalyzer::new(boxed, Arc::clone(&cache))
    };
    let analyzer_stats = Arc::clone(&analyzer.stats);

    let reasoner_retrying: Retrying<Box<dyn ReasonerClient>> = match &config.backends.reasoner {
        RoleBackend::Named(_) => Retrying::new(Box::new(mock_reasoner), mock_policy()),
        RoleBackend::Http(c) => Retrying::new(Box::new(HttpReasoner::new(c.clone())), http_policy(c)),
    };
    let reasoner_counters = reasoner_retrying.counters();
    let (reasoner, reasoner_stats): (Box<dyn ReasonerClient>, Option<Arc<CacheStats>>) =
        if config.cache_reasoner {
            let cached = CachedReasoner::new(reasoner_retrying, Arc::clone(&cache));
            let stats = Arc::clone(&cached.stats);
            (Box::new(cached), Some(stats))
        } else {
            (Box::new(reasoner_retrying), None)
        };

    let embedder_retrying: Retrying<Box<dyn EmbedderClient>> = match &config.backends.embedder {
        RoleBackend::Named(_) => Retrying::new(Box::new(mock_embedder), mock_policy()),
        RoleBackend::Http(c) => Retrying::new(Box::new(HttpEmbedder::new(c.clone())), http_policy(c)),
    };
    let embedder_counters = embedder_retrying.counters();

    Ok(Clients {
        tagger: Box::new(tagger),
        captioner: Box::new(captioner),
        analyzer: Box::new(analyzer),
        reasoner,
        embedder: Box::new(embedder_retrying),
        tagger_stats,
        captioner_stats,
        analyzer_stats,
        reasoner_stats,
        reasoner_counters,
        embedder_counters,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = path.parent().expect("output paths have parents");
    std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let tmp = parent.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn record_file_name(sample_id: &str) -> String {
    let stem: String = sample_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_') {
                c
            } else {
                '-'
            }
        })
        .collect();
    if stem == sample_id {
        format!("{stem}.json")
    } else {
        // sanitization can collide distinct ids; disambiguate with a digest
        let digest = crate::backends::input_digest(sample_id.as_bytes());
        format!("{stem}-{}.json", &digest[..8])
    }
}

fn render_prompt_file(prompt: &CotPrompt) -> String {
    format!(
        "=== SYSTEM ===\n{}\n=== USER ===\n{}\n",
        prompt.system_text, prompt.user_text
    )
}

/// Process one sample end to end and write its record and prompt files.
fn run_sample(
    sample: &ImageSample,
    clients: &Clients,
    sweep_cfg: &SweepConfig,
    sections: PromptSections,
    template: &PromptTemplate,
    global_seed: u64,
    output_dir: &Path,
) -> Result<RunRecord, String> {
    let decouple_started = std::time::Instant::now();
    let bundle = decouple(
        sample,
        &clients.tagger,
        &clients.captioner,
        &clients.analyzer,
        DEFAULT_AGENT_PARALLELISM,
    )
    .map_err(|e| format!("sample '{}': {e}", sample.id))?;
    let decouple_elapsed = decouple_started.elapsed();

    let attachments = sample
        .reasoner_attachments()
        .into_iter()
        .cloned()
        .collect();
    let prompt = build_prompt_with(template, sections, &bundle, attachments)
        .map_err(|e| format!("sample '{}': {e}", sample.id))?;
    write_atomic(
        &output_dir
            .join(PROMPTS_DIR)
            .join(format!("{}.txt", record_file_name(&sample.id).trim_end_matches(".json"))),
        render_prompt_file(&prompt).as_bytes(),
    )
    .map_err(|e| format!("sample '{}': {e}", sample.id))?;

    let mut record = sweep(
        &sample.id,
        &bundle,
        &prompt,
        &clients.reasoner,
        &clients.embedder,
        sweep_cfg,
        global_seed,
    )
    .map_err(|e| e.to_string())?;
    record.timings.insert("decouple".to_string(), decouple_elapsed);

    let mut bytes = serde_json::to_vec_pretty(&record)
        .map_err(|e| format!("sample '{}': serialize: {e}", sample.id))?;
    bytes.push(b'\n');
    write_atomic(
        &output_dir.join(RECORDS_DIR).join(record_file_name(&sample.id)),
        &bytes,
    )
    .map_err(|e| format!("sample '{}': {e}", sample.id))?;
    Ok(record)
}

/// Probe HTTP backends for reachability: any HTTP response counts, only
/// transport failures do not.
fn check_reachability(config: &AppConfig) -> Result<Vec<String>, CliError> {
    let mut lines = Vec::new();
    let roles = [
        ("tagger", &config.backends.tagger),
        ("captioner", &config.backends.captioner),
        ("analyzer", &config.backends.analyzer),
        ("reasoner", &config.backends.reasoner),
        ("embedder", &config.backends.embedder),
    ];
    for (role, backend) in roles {
        match backend {
            RoleBackend::Named(_) => lines.push(format!("{role}: mock (always reachable)")),
            RoleBackend::Http(c) => {
                let agent = ureq::AgentBuilder::new()
                    .timeout(std::time::Duration::from_secs(5))
                    .build();
                match agent.request("GET", &c.base_url).call() {
                    Ok(_) | Err(ureq::Error::Status(_, _)) => {
                        lines.push(format!("{role}: reachable at {}", c.base_url));
                    }
                    Err(ureq::Error::Transport(t)) => {
                        return Err(CliError::Unreachable(format!(
                            "{role} at {}: {t}",
                            c.base_url
                        )));
                    }
                }
            }
        }
    }
    Ok(lines)
}

/// The `run` command body: decouple -> prompt -> sweep for every sample,
/// one record file per sample plus a manifest. Exit 0 on full success, 2 on
/// partial failure; fatal errors surface as `Err`.
pub fn cmd_run(config: &AppConfig, flags: &RunFlags) -> Result<RunOutcome, CliError> {
    let logger = Logger::new(config.log_level);
    let samples = crate::dataset::load_dataset(&config.dataset_path)?;
    logger.info(format!(
        "loaded {} sample(s) from {}",
        samples.len(),
        config.dataset_path.display()
    ));

    if flags.dry_run {
        for line in check_reachability(config)? {
            logger.info(line);
        }
        logger.info("dry run: config, dataset, and backends check out");
        return Ok(RunOutcome {
            exit_code: 0,
            manifest: RunManifest {
                version: "1".to_string(),
                samples: Vec::new(),
                stats: RunStats::default(),
            },
            manifest_path: config.output_dir.join(RUN_MANIFEST_NAME),
        });
    }

    let clients = build_clients(config)?;
    let sweep_cfg = if flags.no_uncertainty {
        SweepConfig {
            temperatures: vec![SINGLE_TEMPERATURE],
            ..config.sweep.clone()
        }
    } else {
        config.sweep.clone()
    };
    let template = PromptTemplate::builtin();
    let sections = flags.sections();

    std::fs::create_dir_all(config.output_dir.join(RECORDS_DIR))
        .map_err(|e| CliError::io(&config.output_dir, e))?;

    let progress = AtomicUsize::new(0);
    let results: Vec<(String, Result<RunRecord, String>)> = {
        let entries = Mutex::new(Vec::with_capacity(samples.len()));
        let tasks: Vec<_> = samples
            .iter()
            .map(|sample| {
                let entries = &entries;
                let clients = &clients;
                let sweep_cfg = &sweep_cfg;
                let template = &template;
                let progress = &progress;
                let output_dir = config.output_dir.as_path();
                let global_seed = config.global_seed;
                move || {
                    let outcome = run_sample(
                        sample, clients, sweep_cfg, sections, template, global_seed, output_dir,
                    );
                    let done = progress.fetch_add(1, Ordering::SeqCst) + 1;
                    logger.debug(
                        "sample_done",
                        &[
                            ("sample", sample.id.clone()),
                            ("progress", done.to_string()),
                            ("ok", outcome.is_ok().to_string()),
                        ],
                    );
                    entries
                        .lock()
                        .expect("results mutex")
                        .push((sample.id.clone(), outcome));
                }
            })
            .collect();
        parallel_map(config.parallelism, tasks);
        entries.into_inner().expect("results mutex")
    };

    let mut sample_entries: Vec<SampleEntry> = Vec::with_capacity(results.len());
    let mut failures = 0usize;
    let mut by_id: BTreeMap<String, Result<RunRecord, String>> = results.into_iter().collect();
    for sample in &samples {
        let outcome = by_id.remove(&sample.id).expect("every sample has a result");
        match outcome {
            Ok(_) => sample_entries.push(SampleEntry {
                id: sample.id.clone(),
                status: SampleStatus::Ok,
                record: Some(format!("{RECORDS_DIR}/{}", record_file_name(&sample.id))),
                error: None,
            }),
            Err(error) => {
                failures += 1;
                logger.warn(format!("sample '{}' failed: {error}", sample.id));
                sample_entries.push(SampleEntry {
                    id: sample.id.clone(),
                    status: SampleStatus::Failed,
                    record: None,
                    error: Some(error),
                });
            }
        }
    }

    let manifest = RunManifest {
        version: "1".to_string(),
        samples: sample_entries,
        stats: clients.stats(),
    };
    let manifest_path = config.output_dir.join(RUN_MANIFEST_NAME);
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&manifest_path, &bytes)?;

    let exit_code = if failures == 0 { 0 } else { 2 };
    logger.info(format!(
        "run complete: {} ok, {} failed (exit {exit_code})",
        manifest.samples.len() - failures,
        failures
    ));
    Ok(RunOutcome {
        exit_code,
        manifest,
        manifest_path,
    })
}

/// Load every record file in a run directory, sorted by sample id.
pub fn load_run_records(run_dir: &Path) -> Result<Vec<RunRecord>, CliError> {
    let records_dir = run_dir.join(RECORDS_DIR);
    let mut records = Vec::new();
    let entries = match std::fs::read_dir(&records_dir) {
        Ok(entries) => entries,
        Err(_) => return Err(CliError::EmptyRunDir(run_dir.to_path_buf())),
    };
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(&records_dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let record: RunRecord = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("malformed record {}: {e}", path.display()))
        })?;
        let valid_selection = record
            .traces
            .get(record.selected)
            .map(|t| t.as_completed().is_some())
            .unwrap_or(false);
        if !valid_selection {
            return Err(CliError::Config(format!(
                "malformed record {}: 'selected' does not index a completed trace",
                path.display()
            )));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(CliError::EmptyRunDir(run_dir.to_path_buf()));
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(records)
}
