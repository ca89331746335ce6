//! End-to-end orchestration: frequency table, lexicon, selection,
//! augmentation, prompts, few-shot samples, scoring and evaluation.
//!
//! Every stage writes its artifacts under `out_dir` and records their
//! SHA-256 digests in `manifest.json`. A failing stage leaves a `.partial`
//! marker naming it.

pub mod config;
pub mod protocol;
pub mod scorer;

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_dataset, AugmentStats};
use crate::dataset::{write_examples, Dataset, Example, Split, Task};
use crate::error::{Error, Result};
use crate::evalstats::{aggregate, load_predictions, save_predictions, task_metric, EvalReport};
use crate::fewshot::{sample_fewshot, SamplePlan};
use crate::freqcount::build_table;
use crate::lexicon::{parse_entries, prepare_medical, write_entries, MedicalTagPolicy};
use crate::promptfmt::{render_prompt, save_prompts, PromptInstance, PromptTemplate};
use crate::selector::{build_paraphrase_map, ParaphraseMap, SelectorConfig};

pub use config::{PipelineConfig, ScorerConfig};
pub use protocol::{validate_lines, validate_protocol, ValidationReport, Violation};
pub use scorer::{mock_score, mock_score_all, MockMode, MockScorerPolicy};

pub const MANIFEST: &str = "manifest.json";
pub const PARTIAL_MARKER: &str = ".partial";
pub const STAGES: [&str; 8] = [
    "freq", "lexicon", "select", "augment", "format", "sample", "score", "eval",
];

/// The two prompt variants scored per seed.
pub const VARIANTS: [&str; 2] = ["aug", "base"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.stages
            .iter()
            .flat_map(|s| &s.artifacts)
            .find(|a| a.path == path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e.line(), e))
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KReport {
    pub k: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub manifest: Manifest,
    pub reports: Vec<KReport>,
}

struct StageCtx<'a> {
    out_dir: &'a Path,
    files: Vec<String>,
}

impl StageCtx<'_> {
    /// Registers `rel` as an artifact of the current stage and returns its
    /// full path, creating parent directories.
    fn artifact(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.push(rel.to_owned());
        Ok(path)
    }
}

struct Runner<'a> {
    out_dir: &'a Path,
    manifest: Manifest,
}

impl<'a> Runner<'a> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut StageCtx<'a>) -> Result<T>) -> Result<T> {
        let mut ctx = StageCtx {
            out_dir: self.out_dir,
            files: Vec::new(),
        };
        let fail = |out_dir: &Path, e: Error| {
            let _ = fs::write(out_dir.join(PARTIAL_MARKER), format!("{name}\n"));
            Error::Stage {
                stage: name.to_owned(),
                source: Box::new(e),
            }
        };
        let value = f(&mut ctx).map_err(|e| fail(self.out_dir, e))?;
        let mut files = ctx.files;
        files.sort();
        let artifacts = files
            .into_iter()
            .map(|rel| {
                let (sha256, bytes) = sha256_file(&self.out_dir.join(&rel))?;
                Ok(Artifact { path: rel, sha256, bytes })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| fail(self.out_dir, e))?;
        self.manifest.stages.push(StageRecord {
            name: name.to_owned(),
            artifacts,
        });
        Ok(value)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_pairs(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut out = create(path)?;
    for (k, v) in pairs {
        writeln!(out, "{k}\t{v}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn render_all(ds: &Dataset, tpl: &PromptTemplate, split: Option<Split>) -> Result<Vec<PromptInstance>> {
    ds.examples
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| render_prompt(e, tpl))
        .collect()
}

fn save_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let out = create(path)?;
    write_examples(examples.iter(), out).map_err(|e| Error::io(path, e))
}

fn sample_path(k: usize, seed: u64, variant: &str, part: &str) -> String {
    format!("samples/k{k}/seed{seed}.{variant}.{part}.jsonl")
}

fn pred_path(k: usize, seed: u64, variant: &str) -> String {
    format!("score/k{k}/seed{seed}.{variant}.jsonl")
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Mednli => "accuracy",
        Task::Medsts => "pearson",
    }
}

/// Runs all stages in order and writes `manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.as_path();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let _ = fs::remove_file(out_dir.join(PARTIAL_MARKER));
    let mut run = Runner {
        out_dir,
        manifest: Manifest::default(),
    };
    let selector = SelectorConfig::new(cfg.threshold)?;
    let policy = MedicalTagPolicy::parse(&cfg.tags_policy)?;
    let tpl = PromptTemplate::for_task(cfg.task);

    let table = run.stage("freq", |ctx| {
        let table = build_table(&cfg.corpus)?;
        table.save(&ctx.artifact("freq.tsv")?)?;
        Ok(table)
    })?;

    let medical = run.stage("lexicon", |ctx| {
        let entries = parse_entries(&cfg.lexicon)?;
        let (medical, stats) = prepare_medical(&entries, &policy);
        let path = ctx.artifact("medical.jsonl")?;
        write_entries(&medical, create(&path)?).map_err(|e| Error::io(&path, e))?;
        write_pairs(
            &ctx.artifact("lexicon_stats.tsv")?,
            &[
                ("input_entries", stats.input_entries.to_string()),
                ("non_medical", stats.non_medical.to_string()),
                ("no_gloss", stats.no_gloss.to_string()),
                ("dropped_glosses", stats.dropped_glosses.to_string()),
                ("kept", stats.kept.to_string()),
            ],
        )?;
        Ok(medical)
    })?;

    let map = run.stage("select", |ctx| {
        let map = match &cfg.map {
            Some(path) => ParaphraseMap::load(path)?,
            None => {
                let (map, stats) = build_paraphrase_map(&table, &medical, &selector)?;
                write_pairs(
                    &ctx.artifact("select_stats.tsv")?,
                    &[
                        ("threshold", selector.threshold().to_string()),
                        ("candidates", stats.candidates.to_string()),
                        ("included", stats.included.to_string()),
                        ("excluded_multi_word", stats.multi_word.to_string()),
                        ("excluded_not_rare", stats.not_rare.to_string()),
                        ("excluded_multi_gloss", stats.multi_gloss.to_string()),
                        ("excluded_rare_gloss", stats.rare_gloss_token.to_string()),
                    ],
                )?;
                map
            }
        };
        map.save(&ctx.artifact("map.jsonl")?)?;
        Ok(map)
    })?;

    let (base, augmented) = run.stage("augment", |ctx| {
        let base = Dataset::load(&cfg.dataset)?;
        if base.is_empty() {
            return Err(Error::EmptyDataset);
        }
        base.validate_labels(cfg.task)?;
        let (augmented, stats) = if cfg.augment {
            augment_dataset(&base, &map)?
        } else {
            (base.clone(), AugmentStats::default())
        };
        augmented.save(&ctx.artifact("data.aug.jsonl")?)?;
        let path = ctx.artifact("augment_stats.tsv")?;
        stats.write_tsv(create(&path)?).map_err(|e| Error::io(&path, e))?;
        Ok((base, augmented))
    })?;

    let test_prompts = run.stage("format", |ctx| {
        save_prompts(&render_all(&augmented, &tpl, None)?, &ctx.artifact("prompts.aug.jsonl")?)?;
        save_prompts(&render_all(&base, &tpl, None)?, &ctx.artifact("prompts.base.jsonl")?)?;
        let aug_test = render_all(&augmented, &tpl, Some(Split::Test))?;
        let base_test = render_all(&base, &tpl, Some(Split::Test))?;
        if aug_test.is_empty() {
            return Err(Error::InsufficientExamples {
                split: Split::Test.name().into(),
                required: 1,
                available: 0,
            });
        }
        save_prompts(&aug_test, &ctx.artifact("prompts.test.aug.jsonl")?)?;
        save_prompts(&base_test, &ctx.artifact("prompts.test.base.jsonl")?)?;
        Ok([aug_test, base_test])
    })?;

    run.stage("sample", |ctx| {
        for &k in &cfg.k {
            let mut plan = SamplePlan::new(cfg.task, k, cfg.seeds.clone())?;
            plan.full = cfg.full;
            for &seed in &cfg.seeds {
                for (variant, ds) in VARIANTS.iter().zip([&augmented, &base]) {
                    let s = sample_fewshot(ds, &plan, seed)?;
                    save_examples(&ctx.artifact(&sample_path(k, seed, variant, "train"))?, &s.train)?;
                    save_examples(&ctx.artifact(&sample_path(k, seed, variant, "dev"))?, &s.dev)?;
                }
            }
        }
        Ok(())
    })?;

    run.stage("score", |ctx| {
        let mut jobs = Vec::new();
        for &k in &cfg.k {
            for &seed in &cfg.seeds {
                for (v, variant) in VARIANTS.iter().enumerate() {
                    let pred = ctx.artifact(&pred_path(k, seed, variant))?;
                    jobs.push((k, seed, v, pred));
                }
            }
        }
        jobs.par_iter().try_for_each(|(k, seed, v, pred)| {
            let variant = VARIANTS[*v];
            match &cfg.scorer {
                ScorerConfig::Mock(policy) => {
                    save_predictions(&mock_score_all(&test_prompts[*v], policy), pred)
                }
                ScorerConfig::External { command } => {
                    let prompts = out_dir.join(format!("prompts.test.{variant}.jsonl"));
                    let env = [
                        ("RARELEX_TRAIN", out_dir.join(sample_path(*k, *seed, variant, "train")).display().to_string()),
                        ("RARELEX_DEV", out_dir.join(sample_path(*k, *seed, variant, "dev")).display().to_string()),
                        ("RARELEX_SEED", seed.to_string()),
                    ];
                    scorer::run_external(command, &prompts, pred, &env)?;
                    let report = validate_protocol(&prompts, pred)?;
                    match report.violations.first() {
                        None => Ok(()),
                        Some(v) => Err(Error::Scorer(format!(
                            "{}: {} protocol violation(s), first: {v}",
                            pred.display(),
                            report.violations.len()
                        ))),
                    }
                }
            }
        })
    })?;

    let reports = run.stage("eval", |ctx| {
        let gold: Vec<Example> = base.split(Split::Test).cloned().collect();
        let metric = metric_name(cfg.task);
        let mut reports = Vec::new();
        let mut summary = String::new();
        let mut table = String::from("k\tn\tmean\tstd\tbaseline_mean\tbaseline_std\tdelta\tt\tp_value\tsignificant\n");
        for &k in &cfg.k {
            let mut ours = Vec::new();
            let mut theirs = Vec::new();
            for &seed in &cfg.seeds {
                for (variant, acc) in VARIANTS.iter().zip([&mut ours, &mut theirs]) {
                    let preds = load_predictions(&out_dir.join(pred_path(k, seed, variant)))?;
                    acc.push((seed, task_metric(cfg.task, &preds, &gold)?));
                }
            }
            let report = aggregate(&ours, &theirs)?;
            let path = ctx.artifact(&format!("eval/k{k}.tsv"))?;
            report.write_tsv(create(&path)?).map_err(|e| Error::io(&path, e))?;
            summary.push_str(&format!("k={k}: {}\n", report.summary(metric)));
            table.push_str(&format!(
                "{k}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                report.n,
                report.mean,
                report.std,
                report.baseline_mean,
                report.baseline_std,
                report.delta_mean,
                report.t,
                report.p_value,
                report.significant
            ));
            reports.push(KReport { k, report });
        }
        let path = ctx.artifact("eval/summary.txt")?;
        fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
        let path = ctx.artifact("eval/report.tsv")?;
        fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
        Ok(reports)
    })?;

    let manifest = run.manifest;
    let path = out_dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(PipelineRun { manifest, reports })
}
