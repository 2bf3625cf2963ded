use std::fs;
use std::path::{Path, PathBuf};

use mediadiet::corpus::MediaDietDataset;
use mediadiet::explain::{cosine, ExplainOptions, NeighborResult};
use mediadiet::pipeline::{parse_stages, run_pipeline, PipelineConfig, PipelineError, Stage};
use mediadiet::probe::load_prompts;
use mediadiet::synth::{hash_embed, record_hash_embed_replay};
use serde_json::Value;

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn toy_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(toy_dir().join("config.json")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn missing_required_field_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(toy_dir().join("config.json")).unwrap()).unwrap();
    doc.as_object_mut().unwrap().remove("prompts");
    let path = dir.path().join("config.json");
    fs::write(&path, doc.to_string()).unwrap();
    let err = PipelineConfig::load(&path).unwrap_err();
    assert!(matches!(err, PipelineError::Config { .. }));
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("prompts"), "{err}");
}

#[test]
fn absent_input_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.questions = "no_such_questions.json".into();
    match run_pipeline(&cfg, &[]).unwrap_err() {
        PipelineError::Config { field, .. } => assert_eq!(field, "questions"),
        other => panic!("unexpected {other:?}"),
    }
    let mut cfg = toy_config(dir.path());
    cfg.base.model_tag = " ".into();
    assert_eq!(run_pipeline(&cfg, &[]).unwrap_err().exit_code(), 2);
}

#[test]
fn downstream_stage_without_inputs_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let err = run_pipeline(&cfg, &[Stage::Score]).unwrap_err();
    match &err {
        PipelineError::Dependency { stage, producer, .. } => {
            assert_eq!(*stage, Stage::Score);
            assert_eq!(*producer, Stage::Train);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
    // nothing was written
    assert!(!dir.path().join("run_manifest.json").exists());
}

#[test]
fn failing_stage_leaves_marker_and_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let broken = dir.path().join("prompts.json");
    fs::write(&broken, "[{\"prompt_id\": ").unwrap();
    let mut cfg = toy_config(&out);
    cfg.prompts = broken;
    let err = run_pipeline(&cfg, &parse_stages("ingest,train,score,join").unwrap()).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Score, .. }));
    assert_eq!(err.exit_code(), 3);
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.starts_with("stage: score\n"));
    // the error line carries the underlying cause, not just the stage
    assert!(marker.contains("prompts.json: EOF while parsing"), "{marker}");
    assert!(out.join("models").join("BASE-2019.ngram.json").exists());
    assert!(!out.join("scores.csv").exists());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");

    // a later successful run clears the marker
    let cfg = toy_config(&out);
    run_pipeline(&cfg, &parse_stages("score").unwrap()).unwrap();
    assert!(!out.join("FAILED").exists());
}

#[test]
fn config_hash_ignores_output_dir_only() {
    let a = toy_config(Path::new("/tmp/one"));
    let b = toy_config(Path::new("/tmp/two"));
    assert_eq!(a.hash(), b.hash());
    let mut c = toy_config(Path::new("/tmp/one"));
    c.seed += 1;
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn stage_list_parsing() {
    assert_eq!(parse_stages("score, join").unwrap(), vec![Stage::Score, Stage::Join]);
    assert!(parse_stages("").unwrap().is_empty());
    assert!(matches!(parse_stages("score,plot"), Err(PipelineError::Config { .. })));
}

#[test]
fn outputs_carry_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let report = run_pipeline(&cfg, &parse_stages("ingest,train,score,join").unwrap()).unwrap();
    assert_eq!(report.config_sha256, cfg.hash());
    let first = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert_eq!(first.lines().next().unwrap(), format!("# config_sha256: {}", cfg.hash()));
    let survey = fs::read_to_string(dir.path().join("survey.csv")).unwrap();
    assert!(survey.starts_with("# config_sha256: "));
}

#[test]
fn explain_stage_matches_exhaustive_cosine_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = toy_config(&out);
    run_pipeline(&cfg, &[Stage::Ingest]).unwrap();

    let explain = cfg.explain.clone().unwrap();
    let dataset = MediaDietDataset::load(out.join("datasets"), &explain.dataset).unwrap();
    let prompts = load_prompts(toy_dir().join("prompts.json")).unwrap();
    let query = prompts.iter().find(|p| p.prompt_id == explain.prompt_id).unwrap().filled(&explain.fill);
    let replay = dir.path().join("embed.jsonl");
    record_hash_embed_replay(&dataset, std::slice::from_ref(&query), ExplainOptions::default().batch_size, &replay)
        .unwrap();
    cfg.explain.as_mut().unwrap().backend.endpoint_or_path = Some(replay.display().to_string());
    run_pipeline(&cfg, &[Stage::Explain]).unwrap();

    let stem = format!("{}_{}_{}", explain.prompt_id, explain.fill, explain.dataset);
    let doc: Value =
        serde_json::from_str(&fs::read_to_string(out.join("explain").join(format!("{stem}.json"))).unwrap()).unwrap();
    assert_eq!(doc["config_sha256"], cfg.hash());
    let result: NeighborResult = serde_json::from_value(doc["result"].clone()).unwrap();
    assert_eq!(result.neighbors.len(), explain.k);

    let q = hash_embed(&query);
    let mut all: Vec<(f64, &str)> =
        dataset.sentences().map(|s| (cosine(&q, &hash_embed(&s.text)), s.sent_id.as_str())).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    for (n, (sim, _)) in result.neighbors.iter().zip(&all) {
        assert!((n.similarity - sim).abs() < 1e-12);
    }
    // the k-th similarity bounds everything left out
    let kth = result.neighbors.last().unwrap().similarity;
    let chosen: Vec<&str> = result.neighbors.iter().map(|n| n.sent_id.as_str()).collect();
    assert!(all.iter().filter(|(_, id)| !chosen.contains(id)).all(|(s, _)| *s <= kth + 1e-12));
}
