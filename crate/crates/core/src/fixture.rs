//! Deterministic synthetic inputs: a corpus with controlled word counts, the
//! bundled lexicon, a labelled dataset and a `run.json` wiring them up.
//!
//! The corpus is sized so that a threshold of [`FIXTURE_THRESHOLD`] plays
//! the role the default threshold plays on a web-scale corpus: about two
//! thirds of lexicon headwords fall below it, gloss words and filler fall
//! well above it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::{Dataset, Example, Label, Split, Task};
use crate::error::{Error, Result};
use crate::fewshot::SplitMix64;
use crate::freqcount::tokenize;
use crate::lexicon::{parse_entries_from, prepare_medical, DictionaryEntry, MedicalTagPolicy};
use crate::pipeline::{MockScorerPolicy, PipelineConfig, ScorerConfig};

pub const FIXTURE_LEXICON: &str = include_str!("../fixtures/lexicon.jsonl");
pub const FIXTURE_THRESHOLD: u64 = 50;

const FILLER: &[&str] = &[
    "the", "of", "and", "to", "a", "in", "is", "was", "for", "that", "on", "with", "as", "by", "at",
    "it", "from", "this", "be", "are", "or", "an", "not", "were", "which", "has", "had", "have",
    "but", "they", "he", "she", "his", "her", "their", "we", "one", "all", "there", "been", "can",
    "would", "more", "when", "will", "no", "if", "out", "so", "up", "said", "what", "about", "who",
    "its", "into", "than", "them", "only", "some", "could", "time", "these", "two", "may", "first",
    "then", "do", "any", "like", "my", "now", "over", "such", "our", "man", "me", "even", "most",
    "made", "after", "also", "did", "many", "before", "must", "through", "back", "years", "where",
    "much", "your", "way", "well", "down", "should", "because", "each", "just", "those", "people",
    "how", "too", "little", "state", "good", "very", "make", "world", "still", "own", "see", "men",
    "work", "long", "get", "here", "between", "both", "life", "being", "under", "never", "day",
    "same", "another", "know", "while", "last", "might", "us", "great", "old", "year", "off",
    "come", "since", "against", "go", "came", "right", "used", "take", "three", "patient", "exam",
    "history", "notable", "presented", "days", "ago", "admission", "started", "treatment",
    "findings", "consistent", "evidence", "seen", "clinic", "reports", "today", "noted",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub corpus_tokens: u64,
    pub examples: usize,
    pub task: Task,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus_tokens: 1_000_000,
            examples: 200,
            task: Task::Mednli,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureFiles {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub dataset: PathBuf,
    pub config: PathBuf,
}

pub fn fixture_entries() -> Vec<DictionaryEntry> {
    parse_entries_from(FIXTURE_LEXICON.as_bytes(), "fixture lexicon").expect("bundled lexicon parses")
}

/// Word counts for the synthetic corpus, keyed by folded token. Sums to
/// `spec.corpus_tokens` exactly.
pub fn corpus_counts(spec: &FixtureSpec) -> Result<BTreeMap<String, u64>> {
    let mut rng = SplitMix64::new(spec.seed ^ 0x5EED_C0DE);
    let entries = fixture_entries();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let headwords: BTreeSet<String> = entries
        .iter()
        .filter_map(|e| match tokenize(&e.headword).as_slice() {
            [one] => Some(one.as_str().to_owned()),
            _ => None,
        })
        .collect();
    for w in &headwords {
        let c = if rng.below(100) < 65 {
            rng.below(FIXTURE_THRESHOLD - 4)
        } else {
            FIXTURE_THRESHOLD + 10 + rng.below(740)
        };
        counts.insert(w.clone(), c);
    }
    let mut other: BTreeSet<String> = BTreeSet::new();
    for e in &entries {
        other.extend(tokenize(&e.headword).into_iter().map(|t| t.into_string()));
        for g in &e.glosses {
            other.extend(tokenize(g).into_iter().map(|t| t.into_string()));
        }
    }
    for w in other {
        if !counts.contains_key(&w) && !FILLER.contains(&w.as_str()) {
            counts.insert(w, 2 * FIXTURE_THRESHOLD + rng.below(1200));
        }
    }
    let assigned: u64 = counts.values().sum();
    let filler: Vec<&str> = FILLER.iter().copied().filter(|w| !counts.contains_key(*w)).collect();
    let floor = 4 * FIXTURE_THRESHOLD * filler.len() as u64;
    if spec.corpus_tokens < assigned + floor {
        return Err(Error::InvalidArgument(format!(
            "corpus_tokens must be at least {}",
            assigned + floor
        )));
    }
    // Zipf-distributed filler takes up the rest.
    let rest = spec.corpus_tokens - assigned;
    let weights: Vec<f64> = (1..=filler.len()).map(|r| 1.0 / r as f64).collect();
    let sum: f64 = weights.iter().sum();
    let mut given = 0;
    let mut shares = Vec::with_capacity(filler.len());
    for w in &weights {
        let c = (rest as f64 * w / sum).floor() as u64;
        given += c;
        shares.push(c);
    }
    shares[0] += rest - given;
    for (w, c) in filler.iter().zip(shares) {
        counts.insert((*w).to_owned(), c);
    }
    Ok(counts)
}

fn surfaces() -> BTreeMap<String, String> {
    fixture_entries()
        .into_iter()
        .filter(|e| e.is_abbreviation)
        .filter_map(|e| match tokenize(&e.headword).as_slice() {
            [one] => Some((one.as_str().to_owned(), e.headword.clone())),
            _ => None,
        })
        .collect()
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Writes the corpus: the counted tokens in shuffled order, 8 to 20 words
/// per line. Abbreviations keep their upper-case form.
pub fn write_corpus<W: Write>(spec: &FixtureSpec, mut out: W) -> Result<()> {
    let counts = corpus_counts(spec)?;
    let surface = surfaces();
    let vocab: Vec<String> = counts
        .keys()
        .map(|w| surface.get(w).cloned().unwrap_or_else(|| w.clone()))
        .collect();
    let mut stream: Vec<u32> = Vec::with_capacity(spec.corpus_tokens as usize);
    for (i, c) in counts.values().enumerate() {
        stream.extend(std::iter::repeat_n(i as u32, *c as usize));
    }
    let mut rng = SplitMix64::new(spec.seed);
    rng.shuffle(&mut stream);
    let io = |e| Error::io("<corpus>", e);
    let mut rest = stream.as_slice();
    let mut line = String::new();
    while !rest.is_empty() {
        let n = (8 + rng.below(13) as usize).min(rest.len());
        let (head, tail) = rest.split_at(n);
        line.clear();
        for (j, &t) in head.iter().enumerate() {
            let w = &vocab[t as usize];
            if j == 0 {
                line.push_str(&capitalize(w));
            } else {
                line.push(' ');
                line.push_str(w);
            }
        }
        line.push_str(".\n");
        out.write_all(line.as_bytes()).map_err(io)?;
        rest = tail;
    }
    out.flush().map_err(io)
}

fn pick<'a, T>(rng: &mut SplitMix64, items: &'a [T]) -> &'a T {
    &items[rng.below(items.len() as u64) as usize]
}

fn strip_period(s: &str) -> &str {
    s.strip_suffix('.').unwrap_or(s)
}

/// A labelled dataset whose sentences mention lexicon headwords.
pub fn fixture_dataset(spec: &FixtureSpec) -> Result<Dataset> {
    if spec.examples == 0 {
        return Err(Error::EmptyDataset);
    }
    let (medical, _) = prepare_medical(&fixture_entries(), &MedicalTagPolicy::default());
    let words: Vec<(&str, &str)> = medical
        .iter()
        .filter(|e| tokenize(&e.headword).len() == 1)
        .map(|e| (e.headword.as_str(), strip_period(&e.glosses[0])))
        .collect();
    let mut rng = SplitMix64::new(spec.seed ^ 0xDA7A);
    let n = spec.examples;
    let splits: Vec<Split> = match spec.task {
        Task::Mednli => {
            let train = n * 3 / 5;
            let dev = n / 5;
            (0..n)
                .map(|i| if i < train { Split::Train } else if i < train + dev { Split::Dev } else { Split::Test })
                .collect()
        }
        Task::Medsts => {
            let train = n * 3 / 4;
            (0..n).map(|i| if i < train { Split::Train } else { Split::Test }).collect()
        }
    };
    let premises = [
        "The patient was {w} on admission.",
        "On exam the patient had {w} and was started on treatment.",
        "History is notable for {w}.",
        "She presented with {w} two days ago.",
    ];
    let mut examples = Vec::with_capacity(n);
    for (i, split) in splits.into_iter().enumerate() {
        let &(w, g) = pick(&mut rng, &words);
        let id = format!("{}-{}-{i:04}", spec.task, split);
        let ex = match spec.task {
            Task::Mednli => {
                let premise = pick(&mut rng, &premises).replace("{w}", w);
                let label = Task::MEDNLI_LABELS[rng.below(3) as usize];
                let hypothesis = match label {
                    "entailment" => format!("Findings are consistent with {g}."),
                    "contradiction" => format!("There is no evidence of {g}."),
                    _ => "The patient was seen in clinic last year.".to_owned(),
                };
                Example::new(id, premise, hypothesis, Label::Class(label.into()), split)
            }
            Task::Medsts => {
                let score = rng.below(11) as f64 * 0.5;
                let other = if score >= 2.5 { g } else { pick(&mut rng, &words).1 };
                Example::new(
                    id,
                    format!("The patient reports {w} today."),
                    format!("The patient reports {other} today."),
                    Label::Score(score),
                    split,
                )
            }
        };
        examples.push(ex);
    }
    Dataset::new(spec.task.name(), examples)
}

/// Writes corpus, lexicon, dataset and `run.json` into `dir`.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<FixtureFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = FixtureFiles {
        corpus: dir.join("corpus.txt"),
        lexicon: dir.join("lexicon.jsonl"),
        dataset: dir.join(format!("{}.jsonl", spec.task)),
        config: dir.join("run.json"),
    };
    let file = fs::File::create(&files.corpus).map_err(|e| Error::io(&files.corpus, e))?;
    write_corpus(spec, std::io::BufWriter::new(file))?;
    fs::write(&files.lexicon, FIXTURE_LEXICON).map_err(|e| Error::io(&files.lexicon, e))?;
    fixture_dataset(spec)?.save(&files.dataset)?;
    let cfg = PipelineConfig {
        corpus: vec!["corpus.txt".into()],
        lexicon: "lexicon.jsonl".into(),
        dataset: format!("{}.jsonl", spec.task).into(),
        task: spec.task,
        threshold: FIXTURE_THRESHOLD,
        k: vec![16],
        seeds: (0..10).collect(),
        full: false,
        tags_policy: "default".into(),
        augment: true,
        map: None,
        scorer: ScorerConfig::Mock(MockScorerPolicy::default()),
        out_dir: "run".into(),
    };
    let mut text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    text.push('\n');
    fs::write(&files.config, text).map_err(|e| Error::io(&files.config, e))?;
    Ok(files)
}
