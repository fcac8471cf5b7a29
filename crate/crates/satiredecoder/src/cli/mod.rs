//! Command implementations behind the `satiredecoder` binary. Exit code
//! contract: 0 full success, 1 fatal/config error, 2 partial failure.

pub mod config;
pub mod logging;
mod pipeline;

pub use config::{AppConfig, BackendsConfig, RoleBackend, API_KEY_ENV};
pub use logging::{LogLevel, Logger};
pub use pipeline::{
    cmd_run, load_run_records, RunFlags, RunManifest, RunOutcome, RunStats, SampleStatus,
    PROMPTS_DIR, RECORDS_DIR, RUN_MANIFEST_NAME, SINGLE_TEMPERATURE,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backends::MockEmbedder;
use crate::core::TraceResult;
use crate::dataset::DatasetError;
use crate::metrics::{
    aggregate, bleu, chair, embed_f, meteor_lite, rouge_l, ChairCounts, MetricReport,
    MetricsError, SampleMetrics, SkippedSample,
};

pub const METRIC_REPORT_NAME: &str = "metric_report.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run directory {} contains no records", .0.display())]
    EmptyRunDir(PathBuf),
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Every fatal error maps to exit code 1.
    pub fn exit_code(&self) -> i32 {
        1
    }
}

/// Evaluate each record's selected interpretation against the dataset's
/// gold annotations, write the metric report JSON, and print a table.
/// Embeddings come from the deterministic offline embedder so evaluation
/// needs no backend.
pub fn cmd_eval(
    run_dir: &Path,
    dataset_path: &Path,
    out_path: Option<&Path>,
    csv_path: Option<&Path>,
) -> Result<(MetricReport, i32), CliError> {
    let records = load_run_records(run_dir)?;
    let samples = crate::dataset::load_dataset(dataset_path)?;
    let by_id: BTreeMap<&str, &crate::core::ImageSample> =
        samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let embedder = MockEmbedder::default();

    let mut per_sample: BTreeMap<String, SampleMetrics> = BTreeMap::new();
    let mut skipped: Vec<SkippedSample> = Vec::new();

    for record in &records {
        let Some(sample) = by_id.get(record.sample_id.as_str()) else {
            skipped.push(SkippedSample {
                id: record.sample_id.clone(),
                reason: "sample not present in dataset".to_string(),
            });
            continue;
        };
        if sample.gold_description.trim().is_empty() {
            skipped.push(SkippedSample {
                id: record.sample_id.clone(),
                reason: "missing gold_description".to_string(),
            });
            continue;
        }
        let candidate = record.selected_trace().r3.as_str();
        let reference = sample.gold_description.as_str();
        let chair_counts = if sample.mention_vocabulary.is_empty() {
            // no annotated objects: hallucination metrics undefined here
            ChairCounts::default()
        } else {
            chair(
                candidate,
                &sample.gold_objects,
                &sample.mention_vocabulary,
                &sample.synonyms,
            )?
        };
        per_sample.insert(
            record.sample_id.clone(),
            SampleMetrics {
                bleu: bleu(candidate, reference, 4)?,
                rouge_l: rouge_l(candidate, reference)?,
                meteor: meteor_lite(candidate, reference)?,
                embed_f: embed_f(candidate, reference, &embedder)?,
                chair: chair_counts,
            },
        );
    }

    if per_sample.is_empty() {
        return Err(CliError::Config(format!(
            "no evaluable samples: {} record(s) all skipped",
            records.len()
        )));
    }

    let corpus = aggregate(&per_sample)?;
    // self-consistency: AVE must equal the mean of the four NLG fields
    let recomputed = (corpus.bleu + corpus.rouge_l + corpus.meteor + corpus.embed_f) / 4.0;
    assert!(
        (corpus.ave - recomputed).abs() < 1e-12,
        "report AVE is inconsistent with its own NLG fields"
    );

    let mut notes = BTreeMap::new();
    notes.insert("embedder".to_string(), "mock-embedder".to_string());
    notes.insert("chair_aggregation".to_string(), "micro".to_string());
    let report = MetricReport {
        version: "1".to_string(),
        per_sample,
        corpus,
        skipped,
        notes,
    };

    let out = out_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join(METRIC_REPORT_NAME));
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(&out, &bytes).map_err(|e| CliError::io(&out, e))?;

    if let Some(csv) = csv_path {
        write_csv(csv, &report)?;
    }

    print!("{}", render_eval_table(&report));
    Ok((report, 0))
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

fn render_eval_table(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "sample", "bleu", "rouge_l", "meteor", "embed_f", "chair_i", "chair_s"
    ));
    for (id, m) in &report.per_sample {
        out.push_str(&format!(
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}\n",
            id,
            m.bleu,
            m.rouge_l,
            m.meteor,
            m.embed_f,
            fmt_opt(m.chair.chair_i()),
            fmt_opt(m.chair.chair_s()),
        ));
    }
    let c = &report.corpus;
    out.push_str(&format!(
        "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}   ave={:.4}\n",
        "corpus",
        c.bleu,
        c.rouge_l,
        c.meteor,
        c.embed_f,
        fmt_opt(c.chair_i),
        fmt_opt(c.chair_s),
        c.ave,
    ));
    for s in &report.skipped {
        out.push_str(&format!("skipped {:<16} {}\n", s.id, s.reason));
    }
    out
}

fn write_csv(path: &Path, report: &MetricReport) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut write = |line: String| -> Result<(), CliError> {
        writeln!(file, "{line}").map_err(|e| CliError::io(path, e))
    };
    write("sample,bleu,rouge_l,meteor,embed_f,chair_i,chair_s".to_string())?;
    for (id, m) in &report.per_sample {
        write(format!(
            "{id},{},{},{},{},{},{}",
            m.bleu,
            m.rouge_l,
            m.meteor,
            m.embed_f,
            m.chair.chair_i().map(|v| v.to_string()).unwrap_or_default(),
            m.chair.chair_s().map(|v| v.to_string()).unwrap_or_default(),
        ))?;
    }
    let c = &report.corpus;
    write(format!(
        "corpus,{},{},{},{},{},{}",
        c.bleu,
        c.rouge_l,
        c.meteor,
        c.embed_f,
        c.chair_i.map(|v| v.to_string()).unwrap_or_default(),
        c.chair_s.map(|v| v.to_string()).unwrap_or_default(),
    ))
}

/// Render the per-sample uncertainty-versus-temperature table: one row per
/// trace, the selected trace marked, failed traces called out.
pub fn render_report(run_dir: &Path) -> Result<String, CliError> {
    let records = load_run_records(run_dir)?;
    let mut out = String::new();
    for record in &records {
        out.push_str(&format!("sample {}\n", record.sample_id));
        out.push_str(&format!(
            "  {:>6} {:>9} {:>9} {:>11} {:>9} {}\n",
            "temp", "u1", "u2", "u_combined", "retries", "status"
        ));
        for (idx, trace) in record.traces.iter().enumerate() {
            match trace {
                TraceResult::Completed(t) => {
                    let marker = if idx == record.selected { "  <- selected" } else { "" };
                    out.push_str(&format!(
                        "  {:>6} {:>9.4} {:>9.4} {:>11.4} {:>9} ok{}\n",
                        t.temperature, t.u1, t.u2, t.u_combined, t.retry_count, marker
                    ));
                }
                TraceResult::Failed { temperature, error } => {
                    out.push_str(&format!(
                        "  {:>6} {:>9} {:>9} {:>11} {:>9} FAILED: {}\n",
                        temperature, "-", "-", "-", "-", error
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// The `report` command: print the table, exit 0 (fatal errors surface as
/// `Err`, mapped to exit 1 by the binary).
pub fn cmd_report(run_dir: &Path) -> Result<i32, CliError> {
    print!("{}", render_report(run_dir)?);
    Ok(0)
}
