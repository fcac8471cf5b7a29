//! End-to-end command tests over temporary datasets with mock backends.

mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{mock_config, write_demo_dataset};
use satiredecoder::backends::{reasoner_fixture_key, BackendConfig};
use satiredecoder::cli::{
    cmd_eval, cmd_report, cmd_run, load_run_records, render_report, AppConfig, CliError,
    RoleBackend, RunFlags, SampleStatus, PROMPTS_DIR, RECORDS_DIR,
};
use satiredecoder::core::{
    Caption, ImageRef, ImageSample, RunRecord, SemanticBundle, SubtaskTrace, TagSet, TraceResult,
};
use satiredecoder::cot::FORMAT_REMINDER;

fn run_ok(config: &AppConfig) -> satiredecoder::cli::RunOutcome {
    cmd_run(config, &RunFlags::default()).expect("run should not be fatal")
}

#[test]
fn three_sample_run_writes_records_manifest_and_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 3);
    let out = dir.path().join("out");
    let config = mock_config(&manifest, &out);

    let outcome = run_ok(&config);
    assert_eq!(outcome.exit_code, 0);
    assert_eq!(outcome.manifest.samples.len(), 3);
    assert!(outcome
        .manifest
        .samples
        .iter()
        .all(|s| s.status == SampleStatus::Ok));
    assert!(outcome.manifest_path.exists());

    let records = load_run_records(&out).unwrap();
    assert_eq!(records.len(), 3);
    for record in &records {
        assert_eq!(record.traces.len(), 5);
        assert!(record.selected < record.traces.len());
        assert!(out
            .join(PROMPTS_DIR)
            .join(format!("{}.txt", record.sample_id))
            .exists());
    }
}

#[test]
fn warm_cache_rerun_is_byte_identical_with_zero_backend_calls() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 2);
    let cache = dir.path().join("cache");

    let mut config1 = mock_config(&manifest, &dir.path().join("out1"));
    config1.cache_dir = Some(cache.clone());
    let first = run_ok(&config1);
    assert_eq!(first.exit_code, 0);

    let mut config2 = mock_config(&manifest, &dir.path().join("out2"));
    config2.cache_dir = Some(cache);
    let second = run_ok(&config2);
    assert_eq!(second.exit_code, 0);

    for role in ["tagger", "captioner", "analyzer", "reasoner"] {
        assert_eq!(
            second.manifest.stats.backend_calls.get(role),
            Some(&0),
            "{role} was called on the warm-cache run"
        );
    }
    assert_eq!(second.manifest.stats.cache_misses, 0);
    assert!(second.manifest.stats.cache_hits > 0);

    for id in ["s00", "s01"] {
        let a = std::fs::read(dir.path().join("out1").join(RECORDS_DIR).join(format!("{id}.json"))).unwrap();
        let b = std::fs::read(dir.path().join("out2").join(RECORDS_DIR).join(format!("{id}.json"))).unwrap();
        assert_eq!(a, b, "record {id} differs between runs");
    }
}

#[test]
fn no_uncertainty_runs_single_trace_at_default_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 1);
    let config = mock_config(&manifest, &dir.path().join("out"));
    let flags = RunFlags {
        no_uncertainty: true,
        ..Default::default()
    };
    let outcome = cmd_run(&config, &flags).unwrap();
    assert_eq!(outcome.exit_code, 0);
    let records = load_run_records(&config.output_dir).unwrap();
    assert_eq!(records[0].traces.len(), 1);
    assert_eq!(records[0].traces[0].temperature(), 0.6);
}

fn prompt_lines(out_dir: &Path, id: &str) -> Vec<String> {
    let text = std::fs::read_to_string(out_dir.join(PROMPTS_DIR).join(format!("{id}.txt"))).unwrap();
    text.lines().map(str::to_string).collect()
}

#[test]
fn ablation_flags_remove_exactly_their_sections() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 1);
    let cache = dir.path().join("cache");

    let run_with = |name: &str, flags: RunFlags| -> Vec<String> {
        let mut config = mock_config(&manifest, &dir.path().join(name));
        config.cache_dir = Some(cache.clone());
        let outcome = cmd_run(&config, &flags).unwrap();
        assert_eq!(outcome.exit_code, 0);
        prompt_lines(&config.output_dir, "s00")
    };

    let full = run_with("full", RunFlags::default());
    let cases = [
        ("no_le", RunFlags { no_le: true, ..Default::default() }, "LOCAL TAGS"),
        ("no_gs", RunFlags { no_gs: true, ..Default::default() }, "CAPTION ("),
        ("no_da", RunFlags { no_da: true, ..Default::default() }, "DISCREPANCY:"),
    ];
    for (name, flags, marker) in cases {
        let ablated = run_with(name, flags);
        let missing: Vec<&String> = full.iter().filter(|l| !ablated.contains(l)).collect();
        let added: Vec<&String> = ablated.iter().filter(|l| !full.contains(l)).collect();
        assert!(added.is_empty(), "{name} added lines: {added:?}");
        assert_eq!(missing.len(), 2, "{name} should drop exactly two lines, dropped {missing:?}");
        assert!(
            missing.iter().all(|l| l.contains(marker)),
            "{name} dropped unexpected lines: {missing:?}"
        );
    }
}

#[test]
fn scripted_parse_failures_fail_one_sample_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 2);

    // first pass records the constructed prompts
    let mut probe = mock_config(&manifest, &dir.path().join("probe"));
    probe.cache_dir = Some(dir.path().join("probe-cache"));
    run_ok(&probe);
    let prompt_text = std::fs::read_to_string(
        probe.output_dir.join(PROMPTS_DIR).join("s00.txt"),
    )
    .unwrap();
    let (system_text, user_text) = {
        let rest = prompt_text.strip_prefix("=== SYSTEM ===\n").unwrap();
        let (system, user) = rest.split_once("\n=== USER ===\n").unwrap();
        (system.to_string(), user.strip_suffix('\n').unwrap().to_string())
    };

    // script garbage for both the first and the retry request at every
    // temperature of sample s00; s01 keeps synthesizing normally
    let mut fixtures = Vec::new();
    for temp in &mock_config(&manifest, Path::new("unused")).sweep.temperatures {
        for user in [user_text.clone(), format!("{user_text}{FORMAT_REMINDER}")] {
            let key = reasoner_fixture_key(&system_text, &user, ["s00"]);
            fixtures.push(serde_json::json!({
                "role": "reasoner",
                "key": key,
                "temperature": temp,
                "response": "garbage with no sections"
            }));
        }
    }
    let fixture_path = dir.path().join("fixtures.json");
    std::fs::write(
        &fixture_path,
        serde_json::json!({"version": "1", "fixtures": fixtures}).to_string(),
    )
    .unwrap();

    let mut config = mock_config(&manifest, &dir.path().join("out"));
    config.backends.fixtures = Some(fixture_path);
    let outcome = run_ok(&config);
    assert_eq!(outcome.exit_code, 2);
    let s00 = outcome.manifest.samples.iter().find(|s| s.id == "s00").unwrap();
    assert_eq!(s00.status, SampleStatus::Failed);
    let error = s00.error.as_deref().unwrap();
    assert!(error.contains("s00"), "error lacks sample id: {error}");
    assert!(error.contains("reasoner"), "error lacks role: {error}");
    let s01 = outcome.manifest.samples.iter().find(|s| s.id == "s01").unwrap();
    assert_eq!(s01.status, SampleStatus::Ok);
}

#[test]
fn unreachable_reasoner_fails_every_sample_with_role_and_id() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 1);
    let mut config = mock_config(&manifest, &dir.path().join("out"));
    config.backends.reasoner = RoleBackend::Http(BackendConfig {
        base_url: "http://127.0.0.1:1".to_string(),
        api_key: None,
        model_name: "offline".to_string(),
        timeout_secs: 2.0,
        max_retries: 1,
        retry_backoff_secs: 0.0,
    });
    let outcome = run_ok(&config);
    assert_eq!(outcome.exit_code, 2);
    let error = outcome.manifest.samples[0].error.as_deref().unwrap();
    assert!(error.contains("reasoner"), "{error}");
    assert!(error.contains("s00"), "{error}");
}

#[test]
fn dry_run_validates_without_reasoner_calls() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 2);
    let config = mock_config(&manifest, &dir.path().join("out"));
    let outcome = cmd_run(
        &config,
        &RunFlags {
            dry_run: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(outcome.exit_code, 0);
    assert!(!config.output_dir.join(RECORDS_DIR).exists());
}

#[test]
fn dry_run_probes_http_backend_reachability() {
    use std::io::{Read, Write};
    // any HTTP response, even 404, counts as reachable
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = [0u8; 4096];
        let _ = stream.read(&mut buf);
        stream
            .write_all(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
            .unwrap();
    });

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 1);
    let http = |url: String| {
        RoleBackend::Http(BackendConfig {
            base_url: url,
            api_key: None,
            model_name: "probe".to_string(),
            timeout_secs: 5.0,
            max_retries: 0,
            retry_backoff_secs: 0.0,
        })
    };
    let dry = RunFlags {
        dry_run: true,
        ..Default::default()
    };

    let mut config = mock_config(&manifest, &dir.path().join("out"));
    config.backends.reasoner = http(format!("http://{addr}"));
    assert_eq!(cmd_run(&config, &dry).unwrap().exit_code, 0);
    server.join().unwrap();

    let mut config = mock_config(&manifest, &dir.path().join("out2"));
    config.backends.reasoner = http("http://127.0.0.1:1".to_string());
    assert!(matches!(
        cmd_run(&config, &dry),
        Err(CliError::Unreachable(_))
    ));
}

fn write_record(out_dir: &Path, record: &RunRecord) {
    let records = out_dir.join(RECORDS_DIR);
    std::fs::create_dir_all(&records).unwrap();
    let mut bytes = serde_json::to_vec_pretty(record).unwrap();
    bytes.push(b'\n');
    std::fs::write(records.join(format!("{}.json", record.sample_id)), bytes).unwrap();
}

fn exact_echo_record(sample: &ImageSample) -> RunRecord {
    let bundle = SemanticBundle {
        le_yes: TagSet::from_raw(["person", "plant"]),
        le_but: TagSet::from_raw(["plant"]),
        gs_yes: Caption::new("a person waters a plant").unwrap(),
        gs_but: Caption::new("the plant is wilting").unwrap(),
        d_local: "person appears only on the left".into(),
        d_global: "care versus decay".into(),
    };
    let trace = SubtaskTrace {
        temperature: 0.2,
        r1: bundle.reference_tags(),
        r2: bundle.reference_caption(),
        r3: sample.gold_description.clone(),
        u1: -1.0,
        u2: -1.0,
        u_combined: -1.0,
        retry_count: 0,
    };
    RunRecord::assemble(
        sample.id.clone(),
        bundle,
        vec![TraceResult::Completed(trace)],
        BTreeMap::new(),
    )
    .unwrap()
}

#[test]
fn eval_perfect_records_score_one_and_zero_hallucination() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 2);
    let samples = satiredecoder::dataset::load_dataset(&manifest).unwrap();
    let out = dir.path().join("run");
    for sample in &samples {
        write_record(&out, &exact_echo_record(sample));
    }

    let (report, code) = cmd_eval(&out, &manifest, None, Some(&dir.path().join("m.csv"))).unwrap();
    assert_eq!(code, 0);
    assert!((report.corpus.rouge_l - 1.0).abs() < 1e-9);
    assert!((report.corpus.bleu - 1.0).abs() < 1e-9);
    assert!((report.corpus.embed_f - 1.0).abs() < 1e-6);
    assert_eq!(report.corpus.chair_i, Some(0.0));
    assert_eq!(report.corpus.chair_s, Some(0.0));
    assert!(out.join("metric_report.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.lines().count() >= 3);
    // ave = mean of its own four NLG fields
    let expected_ave =
        (report.corpus.bleu + report.corpus.rouge_l + report.corpus.meteor + report.corpus.embed_f)
            / 4.0;
    assert!((report.corpus.ave - expected_ave).abs() < 1e-12);
}

#[test]
fn eval_skips_samples_without_gold() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::write(images.join("a.png"), common::png_bytes(8, 4, 1)).unwrap();
    std::fs::write(images.join("b.png"), common::png_bytes(8, 4, 2)).unwrap();
    let manifest = dir.path().join("dataset.jsonl");
    std::fs::write(
        &manifest,
        [
            r#"{"version":"1"}"#,
            r#"{"id":"with","image_path":"images/a.png","gold_description":"a person","gold_objects":["person"]}"#,
            r#"{"id":"without","image_path":"images/b.png"}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let samples = satiredecoder::dataset::load_dataset(&manifest).unwrap();
    let out = dir.path().join("run");
    for sample in &samples {
        let mut record = exact_echo_record(sample);
        if sample.gold_description.is_empty() {
            if let TraceResult::Completed(t) = &mut record.traces[0] {
                t.r3 = "anything".to_string();
            }
        }
        write_record(&out, &record);
    }
    let (report, _) = cmd_eval(&out, &manifest, None, None).unwrap();
    assert_eq!(report.per_sample.len(), 1);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].id, "without");
    assert_eq!(report.skipped[0].reason, "missing gold_description");
}

#[test]
fn eval_and_report_reject_empty_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 1);
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(empty.join(RECORDS_DIR)).unwrap();
    assert!(matches!(
        cmd_eval(&empty, &manifest, None, None),
        Err(CliError::EmptyRunDir(_))
    ));
    assert!(matches!(cmd_report(&empty), Err(CliError::EmptyRunDir(_))));
    let missing = dir.path().join("missing");
    assert!(matches!(
        cmd_eval(&missing, &manifest, None, None),
        Err(CliError::EmptyRunDir(_))
    ));
}

#[test]
fn report_marks_selection_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 1);
    let samples = satiredecoder::dataset::load_dataset(&manifest).unwrap();
    let out = dir.path().join("run");

    let mut record = exact_echo_record(&samples[0]);
    let completed = record.traces[0].clone();
    let mk = |temp: f64, u: f64| match &completed {
        TraceResult::Completed(t) => TraceResult::Completed(SubtaskTrace {
            temperature: temp,
            u1: u,
            u2: u,
            u_combined: u,
            ..t.clone()
        }),
        TraceResult::Failed { .. } => unreachable!(),
    };
    record.traces = vec![
        mk(0.2, -0.3),
        mk(0.4, -0.7),
        TraceResult::Failed {
            temperature: 0.6,
            error: "reasoner: boom".into(),
        },
        mk(0.8, -0.7),
        mk(1.0, -0.2),
    ];
    record.selected = 1;
    record.selected_by_u1 = 1;
    record.selected_by_u2 = 1;
    write_record(&out, &record);

    let rendered = render_report(&out).unwrap();
    assert_eq!(rendered.matches("<- selected").count(), 1);
    assert_eq!(rendered.matches("FAILED").count(), 1);
    let selected_line = rendered
        .lines()
        .find(|l| l.contains("<- selected"))
        .unwrap();
    assert!(selected_line.trim_start().starts_with("0.4"));
    assert_eq!(cmd_report(&out).unwrap(), 0);
}

#[test]
fn run_records_round_trip_through_serde() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_dataset(dir.path(), 1);
    let config = mock_config(&manifest, &dir.path().join("out"));
    run_ok(&config);
    let records = load_run_records(&config.output_dir).unwrap();
    let json = serde_json::to_string(&records[0]).unwrap();
    let back: RunRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(records[0], back);
    let _ = ImageRef::new("x", vec![1], "image/png").unwrap();
}
