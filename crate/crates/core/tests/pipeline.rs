use std::fs;
use std::path::Path;

use rarelex::augment::augment_dataset;
use rarelex::dataset::{Dataset, Split, Task};
use rarelex::fixture::{write_fixture, FixtureFiles, FixtureSpec};
use rarelex::pipeline::scorer::overlap_yes_probability;
use rarelex::pipeline::{
    run_pipeline, validate_protocol, MockMode, MockScorerPolicy, PipelineConfig, ScorerConfig,
    PARTIAL_MARKER, STAGES,
};
use rarelex::promptfmt::{render_prompt, PromptTemplate};
use rarelex::selector::ParaphraseMap;
use rarelex::Error;

fn fixture(dir: &Path, task: Task) -> (FixtureFiles, PipelineConfig) {
    let files = write_fixture(
        dir,
        &FixtureSpec {
            task,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = PipelineConfig::load(&files.config).unwrap();
    (files, cfg)
}

fn write_script(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    path.display().to_string()
}

#[test]
fn manifest_lists_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = fixture(dir.path(), Task::Mednli);
    let run = run_pipeline(&cfg).unwrap();
    let names: Vec<&str> = run.manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, STAGES);
    for stage in &run.manifest.stages {
        assert!(!stage.artifacts.is_empty(), "{} has no artifacts", stage.name);
        for a in &stage.artifacts {
            assert_eq!(a.sha256.len(), 64);
            let bytes = fs::metadata(cfg.out_dir.join(&a.path)).unwrap().len();
            assert_eq!(bytes, a.bytes, "{}", a.path);
        }
    }
    let on_disk = rarelex::Manifest::load(&cfg.out_dir.join("manifest.json")).unwrap();
    assert_eq!(on_disk, run.manifest);
    assert!(!cfg.out_dir.join(PARTIAL_MARKER).exists());
}

#[test]
fn missing_corpus_fails_first_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), Task::Mednli);
    let missing = dir.path().join("nope.txt");
    cfg.corpus = vec![missing.clone()];
    let err = run_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(stage, "freq"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains(&missing.display().to_string()), "{err}");
    assert_eq!(fs::read_to_string(cfg.out_dir.join(PARTIAL_MARKER)).unwrap(), "freq\n");
}

#[test]
fn small_dev_split_fails_sampling_and_keeps_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), Task::Mednli);
    cfg.k = vec![64];
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "sample"), "{err}");
    assert!(err.to_string().contains("required 64"), "{err}");
    assert!(cfg.out_dir.join("prompts.test.aug.jsonl").exists());
    assert!(cfg.out_dir.join(PARTIAL_MARKER).exists());
    cfg.k = vec![16];
    run_pipeline(&cfg).unwrap();
    assert!(!cfg.out_dir.join(PARTIAL_MARKER).exists());
}

#[test]
fn medsts_oracle_correlates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = fixture(dir.path(), Task::Medsts);
    let run = run_pipeline(&cfg).unwrap();
    for r in &run.reports {
        assert!((r.report.mean - 1.0).abs() < 1e-12, "{}", r.report.mean);
        assert_eq!(r.report.p_value, 1.0);
    }
}

#[test]
fn external_scorer_matches_mock() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), Task::Mednli);
    cfg.out_dir = dir.path().join("mock");
    let mock = run_pipeline(&cfg).unwrap();
    cfg.out_dir = dir.path().join("external");
    cfg.scorer = ScorerConfig::External {
        command: vec![env!("CARGO_BIN_EXE_rarelex").into(), "score".into(), "--mode".into(), "oracle".into()],
    };
    let external = run_pipeline(&cfg).unwrap();
    assert_eq!(mock.manifest.stage("score"), external.manifest.stage("score"));
    assert_eq!(mock.reports, external.reports);
}

#[test]
fn external_scorer_sees_sample_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), Task::Mednli);
    let log = dir.path().join("calls.log");
    let script = write_script(
        dir.path(),
        "scorer.sh",
        &format!(
            "test -s \"$RARELEX_TRAIN\" || exit 3\necho \"$RARELEX_SEED\" >> {}\nexec {} score \"$@\"",
            log.display(),
            env!("CARGO_BIN_EXE_rarelex")
        ),
    );
    cfg.scorer = ScorerConfig::External {
        command: vec!["sh".into(), script],
    };
    cfg.seeds = vec![4, 9];
    run_pipeline(&cfg).unwrap();
    let mut seeds: Vec<String> = fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    seeds.sort();
    assert_eq!(seeds, ["4", "4", "9", "9"]);
}

#[test]
fn failing_or_invalid_scorer_aborts_score_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = fixture(dir.path(), Task::Mednli);
    cfg.scorer = ScorerConfig::External {
        command: vec!["sh".into(), write_script(dir.path(), "fail.sh", "exit 2")],
    };
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "score"), "{err}");

    let bad = write_script(dir.path(), "bad.sh", "echo '{\"id\":\"nope\",\"scores\":{\"Yes\":1}}' > \"$4\"");
    cfg.scorer = ScorerConfig::External {
        command: vec!["sh".into(), bad],
    };
    let err = run_pipeline(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("protocol violation"), "{msg}");
    assert_eq!(fs::read_to_string(cfg.out_dir.join(PARTIAL_MARKER)).unwrap(), "score\n");
}

#[test]
fn protocol_accepts_mock_output_and_flags_mutations() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = fixture(dir.path(), Task::Mednli);
    run_pipeline(&cfg).unwrap();
    let prompts = cfg.out_dir.join("prompts.test.aug.jsonl");
    let preds = cfg.out_dir.join("score/k16/seed0.aug.jsonl");
    assert!(validate_protocol(&prompts, &preds).unwrap().is_valid());

    let text = fs::read_to_string(&preds).unwrap();
    let first = text.lines().next().unwrap();
    let mutated = first.replacen(",\"maybe\":0.0", "", 1);
    assert_ne!(mutated, first);
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, text.replacen(first, &mutated, 1)).unwrap();
    let report = validate_protocol(&prompts, &broken).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert!(report.violations[0].to_string().contains("incomplete candidates"));
}

#[test]
fn overlap_scorer_prefers_augmented_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let (files, mut cfg) = fixture(dir.path(), Task::Mednli);
    cfg.scorer = ScorerConfig::Mock(MockScorerPolicy {
        mode: MockMode::LexicalOverlap,
        paraphrase_bonus: 0.5,
    });
    let run = run_pipeline(&cfg).unwrap();
    let map = ParaphraseMap::load(&cfg.out_dir.join("map.jsonl")).unwrap();
    let ds = Dataset::load(&files.dataset).unwrap();
    let (aug, _) = augment_dataset(&ds, &map).unwrap();
    let tpl = PromptTemplate::mednli();
    let mut compared = 0;
    for (raw, with) in ds.examples.iter().zip(&aug.examples) {
        let shares_gloss = with
            .annotations
            .iter()
            .flatten()
            .any(|a| raw.sentence2.contains(a.inserted_text.trim_start().trim_matches(['(', ')'])));
        if !shares_gloss {
            continue;
        }
        let a = overlap_yes_probability(&render_prompt(with, &tpl).unwrap(), 0.5);
        let b = overlap_yes_probability(&render_prompt(raw, &tpl).unwrap(), 0.5);
        assert!(a > b, "{}: {a} <= {b}", raw.id);
        compared += 1;
    }
    assert!(compared > 0);
    let report = &run.reports[0].report;
    assert_ne!(report.mean, report.baseline_mean);
    assert!(ds.split(Split::Test).count() > 0);
}

#[test]
fn rerun_into_same_directory_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = fixture(dir.path(), Task::Medsts);
    let a = run_pipeline(&cfg).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(a.manifest, b.manifest);
}
