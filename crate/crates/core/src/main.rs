use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rarelex::augment::augment_dataset;
use rarelex::dataset::{write_examples, Dataset, Split, Task};
use rarelex::evalstats::{aggregate, load_predictions, save_predictions, task_metric};
use rarelex::fewshot::{sample_fewshot, SamplePlan};
use rarelex::fixture::{write_fixture, FixtureSpec};
use rarelex::freqcount::{build_table, FrequencyTable};
use rarelex::lexicon::{parse_entries, prepare_medical, write_entries, MedicalTagPolicy};
use rarelex::pipeline::scorer::run_external;
use rarelex::pipeline::{
    mock_score_all, run_pipeline, validate_protocol, MockMode, MockScorerPolicy, PipelineConfig,
    ScorerConfig,
};
use rarelex::promptfmt::{load_prompts, render_prompt, save_prompts, PromptTemplate};
use rarelex::selector::{
    build_paraphrase_map, parse_thresholds, sweep_thresholds, ParaphraseMap, SelectorConfig,
};

#[derive(Parser)]
#[command(name = "rarelex", version, about = "Rare-word paraphrase augmentation for clinical prompts")]
struct Cli {
    /// Run configuration; supplies defaults for task, threshold and tag policy.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count word frequencies over corpus files (plain or gzip).
    Freq {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Filter a raw lexicon to medical entries and normalize glosses.
    Lexicon {
        #[arg(long)]
        tags_policy: Option<String>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the paraphrase map.
    Select {
        #[arg(long)]
        freq: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        threshold: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Map size and annotation counts over a grid of thresholds.
    Sweep {
        /// `start:end:step` (inclusive) or a comma-separated list.
        #[arg(long)]
        thresholds: String,
        #[arg(long)]
        freq: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Insert paraphrases after rare words.
    Augment {
        #[arg(long)]
        map: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Render prompts.
    Format {
        #[arg(long)]
        task: Option<Task>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Draw a seeded few-shot sample.
    Sample {
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_dev: PathBuf,
        /// Use the whole dev split when it is smaller than k.
        #[arg(long)]
        full: bool,
    },
    /// Score prompts with the mock scorer or an external command.
    Score(ScoreArgs),
    /// Aggregate per-seed metrics against a baseline.
    Eval {
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        baseline_pred: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from a configuration file.
    Run(RunArgs),
    /// Check a prediction file against its prompts.
    Validate {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        preds: PathBuf,
    },
    /// Write the synthetic fixture (corpus, lexicon, dataset, run.json).
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        tokens: u64,
        #[arg(long, default_value_t = 200)]
        examples: usize,
        #[arg(long, default_value = "mednli")]
        task: Task,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.0)]
    paraphrase_bonus: f64,
    /// External scorer; called as `<cmd...> --in <prompts> --out <preds>`.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    cmd: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Oracle,
    LexicalOverlap,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    full: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

struct Defaults(Option<PipelineConfig>);

impl Defaults {
    fn load(path: Option<&Path>) -> Result<Self> {
        Ok(Self(path.map(PipelineConfig::load).transpose()?))
    }

    fn task(&self, flag: Option<Task>) -> Result<Task> {
        flag.or(self.0.as_ref().map(|c| c.task))
            .context("--task is required (or give --config)")
    }

    fn threshold(&self, flag: Option<u64>) -> u64 {
        flag.or(self.0.as_ref().map(|c| c.threshold))
            .unwrap_or(rarelex::selector::DEFAULT_THRESHOLD)
    }

    fn tags_policy(&self, flag: Option<String>) -> String {
        flag.or(self.0.as_ref().map(|c| c.tags_policy.clone()))
            .unwrap_or_else(|| "default".into())
    }
}

/// Orders prediction files by the number following `seed` in the file
/// name, falling back to the given position.
fn seeded(paths: &[PathBuf]) -> Vec<(u64, PathBuf)> {
    let seed_of = |p: &Path| -> Option<u64> {
        let name = p.file_name()?.to_str()?;
        let rest = &name[name.find("seed")? + 4..];
        let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
        digits.parse().ok()
    };
    let mut out: Vec<(u64, PathBuf)> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| (seed_of(p).unwrap_or(i as u64), p.clone()))
        .collect();
    out.sort_by_key(|(s, _)| *s);
    out
}

fn run(cli: Cli) -> Result<ExitCode> {
    let defaults = Defaults::load(cli.config.as_deref())?;
    match cli.command {
        Command::Freq { out, files } => {
            let table = build_table(&files)?;
            table.save(&out)?;
            eprintln!("{} tokens, {} types", table.total_tokens(), table.len());
        }
        Command::Lexicon { tags_policy, input, out } => {
            let policy = MedicalTagPolicy::parse(&defaults.tags_policy(tags_policy))?;
            let entries = parse_entries(&input)?;
            let (medical, stats) = prepare_medical(&entries, &policy);
            write_entries(&medical, create(&out)?)?;
            eprintln!(
                "{} entries: {} non-medical, {} without gloss, {} glosses dropped, {} kept",
                stats.input_entries, stats.non_medical, stats.no_gloss, stats.dropped_glosses, stats.kept
            );
        }
        Command::Select { freq, lexicon, threshold, out, stats } => {
            let table = FrequencyTable::load(&freq)?;
            let medical = parse_entries(&lexicon)?;
            let config = SelectorConfig::new(defaults.threshold(threshold))?;
            let (map, s) = build_paraphrase_map(&table, &medical, &config)?;
            map.save(&out)?;
            let text = format!(
                "candidates\t{}\nincluded\t{}\nexcluded_multi_word\t{}\nexcluded_not_rare\t{}\nexcluded_multi_gloss\t{}\nexcluded_rare_gloss\t{}\n",
                s.candidates, s.included, s.multi_word, s.not_rare, s.multi_gloss, s.rare_gloss_token
            );
            match stats {
                Some(p) => std::fs::write(&p, text)?,
                None => eprint!("{text}"),
            }
        }
        Command::Sweep { thresholds, freq, lexicon, datasets, out } => {
            let table = FrequencyTable::load(&freq)?;
            let medical = parse_entries(&lexicon)?;
            let ds = datasets
                .iter()
                .map(|p| Dataset::load(p))
                .collect::<rarelex::Result<Vec<_>>>()?;
            let report = sweep_thresholds(&table, &medical, &parse_thresholds(&thresholds)?, &ds)?;
            match out {
                Some(p) => report.write_tsv(create(&p)?)?,
                None => report.write_tsv(std::io::stdout().lock())?,
            }
        }
        Command::Augment { map, input, out, stats } => {
            let map = ParaphraseMap::load(&map)?;
            let ds = Dataset::load(&input)?;
            let (aug, s) = augment_dataset(&ds, &map)?;
            aug.save(&out)?;
            match stats {
                Some(p) => s.write_tsv(create(&p)?)?,
                None => s.write_tsv(std::io::stderr().lock())?,
            }
        }
        Command::Format { task, input, out, split } => {
            let task = defaults.task(task)?;
            let tpl = PromptTemplate::for_task(task);
            let ds = Dataset::load(&input)?;
            ds.validate_labels(task)?;
            let split: Option<Split> = split.map(Into::into);
            let prompts = ds
                .examples
                .iter()
                .filter(|e| split.is_none_or(|s| e.split == s))
                .map(|e| render_prompt(e, &tpl))
                .collect::<rarelex::Result<Vec<_>>>()?;
            save_prompts(&prompts, &out)?;
        }
        Command::Sample { task, k, seed, input, out_train, out_dev, full } => {
            let task = defaults.task(task)?;
            let ds = Dataset::load(&input)?;
            let mut plan = SamplePlan::new(task, k, vec![seed])?;
            plan.full = full;
            let s = sample_fewshot(&ds, &plan, seed)?;
            write_examples(s.train.iter(), create(&out_train)?)?;
            write_examples(s.dev.iter(), create(&out_dev)?)?;
        }
        Command::Score(args) => {
            if let Some(cmd) = &args.cmd {
                run_external(cmd, &args.input, &args.out, &[])?;
                let report = validate_protocol(&args.input, &args.out)?;
                if !report.is_valid() {
                    for v in &report.violations {
                        eprintln!("{v}");
                    }
                    bail!("{} protocol violation(s)", report.violations.len());
                }
            } else {
                let policy = MockScorerPolicy {
                    mode: match args.mode {
                        ModeArg::Oracle => MockMode::Oracle,
                        ModeArg::LexicalOverlap => MockMode::LexicalOverlap,
                    },
                    paraphrase_bonus: args.paraphrase_bonus,
                };
                policy.validate()?;
                let prompts = load_prompts(&args.input)?;
                save_predictions(&mock_score_all(&prompts, &policy), &args.out)?;
            }
        }
        Command::Eval { task, gold, pred, baseline_pred, out } => {
            let task = defaults.task(task)?;
            let gold: Vec<_> = Dataset::load(&gold)?.examples;
            let gold: Vec<_> = if gold.iter().any(|e| e.split == Split::Test) {
                gold.into_iter().filter(|e| e.split == Split::Test).collect()
            } else {
                gold
            };
            let metric = |files: &[PathBuf]| -> Result<Vec<(u64, f64)>> {
                seeded(files)
                    .into_iter()
                    .map(|(seed, p)| Ok((seed, task_metric(task, &load_predictions(&p)?, &gold)?)))
                    .collect()
            };
            let report = aggregate(&metric(&pred)?, &metric(&baseline_pred)?)?;
            match out {
                Some(p) => report.write_tsv(create(&p)?)?,
                None => report.write_tsv(std::io::stdout().lock())?,
            }
            let name = match task {
                Task::Mednli => "accuracy",
                Task::Medsts => "pearson",
            };
            eprintln!("{}", report.summary(name));
        }
        Command::Run(args) => {
            let path = cli.config.context("run needs --config run.json")?;
            let mut cfg = PipelineConfig::load(&path)?;
            if let Some(d) = args.out_dir {
                cfg.out_dir = d;
            }
            if let Some(t) = args.threshold {
                cfg.threshold = t;
            }
            if let Some(k) = args.k {
                cfg.k = k;
            }
            if let Some(s) = args.seeds {
                cfg.seeds = s;
            }
            if args.no_augment {
                cfg.augment = false;
            }
            if args.map.is_some() {
                cfg.map = args.map;
            }
            cfg.full |= args.full;
            if let ScorerConfig::External { command } = &cfg.scorer {
                eprintln!("scorer: {}", command.join(" "));
            }
            let result = run_pipeline(&cfg)?;
            let mut stdout = std::io::stdout().lock();
            for r in &result.reports {
                let name = match cfg.task {
                    Task::Mednli => "accuracy",
                    Task::Medsts => "pearson",
                };
                writeln!(stdout, "k={}: {}", r.k, r.report.summary(name))?;
            }
            writeln!(stdout, "manifest: {}", cfg.out_dir.join(rarelex::pipeline::MANIFEST).display())?;
        }
        Command::Validate { prompts, preds } => {
            let report = validate_protocol(&prompts, &preds)?;
            for v in &report.violations {
                println!("{v}");
            }
            if !report.is_valid() {
                eprintln!("{} record(s), {} violation(s)", report.records, report.violations.len());
                return Ok(ExitCode::FAILURE);
            }
            eprintln!("{} record(s), ok", report.records);
        }
        Command::Fixture { out, seed, tokens, examples, task } => {
            let spec = FixtureSpec {
                seed,
                corpus_tokens: tokens,
                examples,
                task,
            };
            let files = write_fixture(&out, &spec)?;
            println!("{}", files.config.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
