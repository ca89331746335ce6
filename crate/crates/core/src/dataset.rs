//! Task instances and their JSONL form.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mednli,
    Medsts,
}

impl Task {
    pub const MEDNLI_LABELS: [&'static str; 3] = ["entailment", "contradiction", "neutral"];
    pub const MAX_SCORE: f64 = 5.0;

    pub fn name(self) -> &'static str {
        match self {
            Task::Mednli => "mednli",
            Task::Medsts => "medsts",
        }
    }

    /// MedNLI labels are classes; MedSTS labels are scores in [0, 5].
    pub fn check_label(self, label: &Label) -> Result<()> {
        match (self, label) {
            (Task::Mednli, Label::Class(c)) if Self::MEDNLI_LABELS.contains(&c.as_str()) => Ok(()),
            (Task::Mednli, Label::Class(c)) => Err(Error::UnknownLabel {
                label: c.clone(),
                valid: Self::MEDNLI_LABELS.join(", "),
            }),
            (Task::Medsts, Label::Score(s)) if (0.0..=Self::MAX_SCORE).contains(s) => Ok(()),
            (task, label) => Err(Error::InvalidArgument(format!(
                "label {label} is not valid for task {}",
                task.name()
            ))),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mednli" => Ok(Task::Mednli),
            "medsts" => Ok(Task::Medsts),
            other => Err(Error::InvalidArgument(format!(
                "unknown task {other:?} (expected mednli or medsts)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(String),
    Score(f64),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(c) => f.write_str(c),
            Label::Score(s) => write!(f, "{s}"),
        }
    }
}

/// Where a paraphrase was inserted. `offset` is the byte offset of the
/// matched word in the original (unannotated) sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    #[serde(rename = "sent")]
    pub sentence_index: u8,
    pub offset: usize,
    #[serde(rename = "word")]
    pub matched_surface: String,
    #[serde(rename = "inserted")]
    pub inserted_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub sentence1: String,
    pub sentence2: String,
    pub label: Label,
    pub split: Split,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub augmented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<AnnotationSpan>>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        sentence1: impl Into<String>,
        sentence2: impl Into<String>,
        label: Label,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            sentence1: sentence1.into(),
            sentence2: sentence2.into(),
            label,
            split,
            augmented: false,
            annotations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids.
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate example id {:?}", ex.id)));
            }
        }
        Ok(Self {
            name: name.into(),
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn validate_labels(&self, task: Task) -> Result<()> {
        for ex in &self.examples {
            task.check_label(&ex.label)
                .map_err(|e| Error::InvalidArgument(format!("example {}: {e}", ex.id)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_jsonl(BufReader::new(file), &name, &path.display().to_string())
    }

    pub fn read_jsonl<R: BufRead>(reader: R, name: &str, source: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(source, i + 1, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Example =
                serde_json::from_str(&line).map_err(|e| Error::parse(source, i + 1, e))?;
            examples.push(ex);
        }
        Self::new(name, examples)
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_examples(&self.examples, out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

pub fn write_examples<'a, W: Write>(
    examples: impl IntoIterator<Item = &'a Example>,
    mut out: W,
) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
