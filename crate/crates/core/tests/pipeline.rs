use std::path::Path;

use emphi::config::RunConfig;
use emphi::fixtures;
use emphi::intent_classifier::ClassifierConfig;
use emphi::model::{Ablations, ModelConfig};
use emphi::pipeline::{self, ChatSession, Workspace};
use emphi::{Error, IntentLabel};
use tempfile::TempDir;

fn synthetic_run() -> (TempDir, RunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let dialogues = dir.path().join("dialogues");
    std::fs::create_dir_all(&dialogues).unwrap();
    fixtures::write_dialogue_csvs(&dialogues, 3, 30).unwrap();
    let intents = dir.path().join("intents.csv");
    fixtures::write_intent_csv(&intents, &fixtures::intent_corpus(20, 3)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.set_seed(3);
    cfg.paths.dialogues_dir = dialogues;
    cfg.paths.intents_path = intents;
    cfg.paths.work_dir = dir.path().join("work");
    cfg.data.min_freq = 1;
    cfg.classifier = ClassifierConfig {
        embedding_dim: 16,
        hidden: 16,
        ffn_hidden: 16,
        epochs: 3,
        learning_rate: 5e-3,
        ..Default::default()
    };
    cfg.model = ModelConfig {
        vocab_size: 0,
        ..fixtures::tiny_model_config(0)
    };
    cfg.training.max_epochs = 2;
    cfg.training.learning_rate = 3e-3;
    cfg.eval.samples = 2;
    cfg.eval.max_response_len = 8;
    (dir, cfg)
}

fn run_all(cfg: &RunConfig) {
    pipeline::extract_keywords_stage(cfg, None).unwrap();
    pipeline::train_classifier_stage(cfg).unwrap();
    pipeline::prepare_data_stage(cfg).unwrap();
    pipeline::train_stage(cfg).unwrap();
    pipeline::evaluate_stage(cfg, &Ablations::default()).unwrap();
}

fn assert_missing_artifact<T: std::fmt::Debug>(r: emphi::Result<T>, expected: &str) {
    match r {
        Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, expected),
        other => panic!("expected missing artifact from {expected}, got {other:?}"),
    }
}

#[test]
fn stages_name_their_missing_prerequisite() {
    let (_dir, cfg) = synthetic_run();
    assert_missing_artifact(pipeline::prepare_data_stage(&cfg), "train-classifier");
    pipeline::train_classifier_stage(&cfg).unwrap();
    pipeline::prepare_data_stage(&cfg).unwrap();
    assert_missing_artifact(pipeline::train_stage(&cfg), "extract-keywords");
    pipeline::extract_keywords_stage(&cfg, None).unwrap();
    assert_missing_artifact(
        pipeline::evaluate_stage(&cfg, &Ablations::default()),
        "train",
    );
    let no_copy = Ablations {
        disable_copy: true,
        ..Default::default()
    };
    pipeline::train_stage(&cfg).unwrap();
    assert_missing_artifact(pipeline::evaluate_stage(&cfg, &no_copy), "train");
}

#[test]
fn missing_inputs_are_reported_as_missing_files() {
    let (_dir, mut cfg) = synthetic_run();
    cfg.paths.intents_path = cfg.paths.work_dir.join("absent.csv");
    assert!(matches!(
        pipeline::extract_keywords_stage(&cfg, None),
        Err(Error::MissingFile(p)) if p.ends_with("absent.csv")
    ));
}

fn artifact_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let ws = Workspace::new(root);
    let ab = Ablations::default();
    [
        ws.keywords(),
        ws.keywords_manifest(),
        ws.vocab(),
        ws.data_manifest(),
        ws.model_checkpoint(&ab),
        ws.model_manifest(&ab),
        ws.eval_report(&ab),
        ws.eval_responses(&ab),
    ]
    .iter()
    .map(|p| (p.display().to_string(), std::fs::read(p).unwrap()))
    .collect()
}

#[test]
fn rerunning_stages_reproduces_artifacts() {
    let (_dir, cfg) = synthetic_run();
    run_all(&cfg);
    let first = artifact_bytes(&cfg.paths.work_dir);
    run_all(&cfg);
    assert_eq!(first, artifact_bytes(&cfg.paths.work_dir));
}

#[test]
fn stale_vocabulary_is_detected() {
    let (_dir, mut cfg) = synthetic_run();
    run_all(&cfg);
    cfg.data.max_vocab = 40;
    pipeline::prepare_data_stage(&cfg).unwrap();
    assert!(matches!(
        pipeline::load_model(&cfg, &Ablations::default()),
        Err(Error::Config(_)) | Err(Error::InvalidArgument(_)) | Err(Error::Format { .. })
    ));
}

#[test]
fn keywords_recover_the_planted_intent_words() {
    let (_dir, cfg) = synthetic_run();
    let (table, path) = pipeline::extract_keywords_stage(&cfg, None).unwrap();
    let stop = emphi::keywords::default_stopwords();
    assert_eq!(path, Workspace::new(&cfg.paths.work_dir).keywords());
    for intent in IntentLabel::all() {
        let top: Vec<&str> = table.keywords(intent)[..6]
            .iter()
            .map(|(w, _)| w.as_str())
            .collect();
        for core in fixtures::INTENT_CORES[intent.id()]
            .iter()
            .filter(|w| !stop.contains(**w))
        {
            assert!(top.contains(core), "{intent}: {core} not in {top:?}");
        }
    }
}

#[test]
fn custom_keyword_output_also_feeds_later_stages() {
    let (dir, cfg) = synthetic_run();
    let out = dir.path().join("kw.txt");
    pipeline::extract_keywords_stage(&cfg, Some(&out)).unwrap();
    assert!(out.is_file());
    assert_eq!(
        pipeline::load_keywords(&cfg).unwrap(),
        emphi::keywords::KeywordTable::load(&out).unwrap()
    );
}

#[test]
fn chat_session_replies_and_honours_forced_intent() {
    let (_dir, cfg) = synthetic_run();
    run_all(&cfg);
    let sympathizing = IntentLabel::from_name("Sympathizing").unwrap();
    let mut chat = ChatSession::open(&cfg, &Ablations::default()).unwrap();
    let reply = chat
        .reply("my dog died last week", Some(sympathizing))
        .unwrap();
    assert_eq!(reply.intent, sympathizing);
    assert_eq!(reply.intents.len(), 9);
    assert!(reply.intents.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(reply.to_text().contains("conditioned on: Sympathizing"));
    assert!(matches!(chat.reply("   ", None), Err(Error::Empty(_))));
}

#[test]
fn audit_report_is_written() {
    let (_dir, cfg) = synthetic_run();
    run_all(&cfg);
    let ws = Workspace::new(&cfg.paths.work_dir);
    let ab = Ablations::default();
    let report =
        pipeline::audit_bias_stage(&cfg, &ws.eval_responses(&ab), &ws.human_responses()).unwrap();
    let text = std::fs::read_to_string(ws.audit_report()).unwrap();
    assert!(text.contains("kl_direction: model||human"));
    assert!(report.kl >= 0.0 && report.kl.is_finite());
}
