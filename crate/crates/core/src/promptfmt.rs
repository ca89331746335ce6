//! Cloze prompt rendering and verbalizers.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Example, Label, Task};
use crate::error::{Error, Result};

pub const MASK: &str = "[MASK]";
pub const SENT1: &str = "{sent1}";
pub const SENT2: &str = "{sent2}";
pub const MASK_SLOT: &str = "{mask}";

const TERMINAL_PUNCTUATION: [char; 3] = ['.', '!', '?'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pattern: String,
    verbalizers: Vec<(String, String)>,
}

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>, verbalizers: Vec<(String, String)>) -> Result<Self> {
        let pattern = pattern.into();
        for slot in [SENT1, MASK_SLOT, SENT2] {
            let n = pattern.matches(slot).count();
            if n != 1 {
                return Err(Error::Template(format!(
                    "pattern must contain {slot} exactly once, found {n}"
                )));
            }
        }
        if pattern.contains(MASK) {
            return Err(Error::Template(format!("pattern must not contain a literal {MASK}")));
        }
        if verbalizers.is_empty() {
            return Err(Error::Template("no verbalizers".into()));
        }
        for (i, (label, token)) in verbalizers.iter().enumerate() {
            if verbalizers[..i].iter().any(|(l, t)| l == label || t == token) {
                return Err(Error::Template(format!(
                    "duplicate verbalizer {label:?} -> {token:?}"
                )));
            }
        }
        Ok(Self {
            pattern,
            verbalizers,
        })
    }

    /// `<Sent1>. [MASK]. <Sent2>` with Yes/No/maybe.
    pub fn mednli() -> Self {
        Self::new(
            "{sent1}. {mask}. {sent2}",
            vec![
                ("entailment".into(), "Yes".into()),
                ("contradiction".into(), "No".into()),
                ("neutral".into(), "maybe".into()),
            ],
        )
        .expect("built-in template is valid")
    }

    /// `<Sent1>. [MASK]. <Sent2>` with Yes/No. The two labels stand for the
    /// ends of the similarity scale.
    pub fn medsts() -> Self {
        Self::new(
            "{sent1}. {mask}. {sent2}",
            vec![
                ("similar".into(), "Yes".into()),
                ("dissimilar".into(), "No".into()),
            ],
        )
        .expect("built-in template is valid")
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Mednli => Self::mednli(),
            Task::Medsts => Self::medsts(),
        }
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn verbalizers(&self) -> &[(String, String)] {
        &self.verbalizers
    }

    pub fn tokens(&self) -> Vec<String> {
        self.verbalizers.iter().map(|(_, t)| t.clone()).collect()
    }

    fn valid_labels(&self) -> String {
        self.verbalizers
            .iter()
            .map(|(l, _)| l.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn verbalize(&self, label: &str) -> Result<&str> {
        self.verbalizers
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, t)| t.as_str())
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_owned(),
                valid: self.valid_labels(),
            })
    }

    pub fn unverbalize(&self, token: &str) -> Result<&str> {
        self.verbalizers
            .iter()
            .find(|(_, t)| t == token)
            .map(|(l, _)| l.as_str())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown verbalizer token {token:?}; valid tokens: {}",
                    self.tokens().join(", ")
                ))
            })
    }
}

pub fn verbalize<'t>(label: &str, tpl: &'t PromptTemplate) -> Result<&'t str> {
    tpl.verbalize(label)
}

/// What the scorer should put at the mask: a verbalizer token for
/// classification, or `[p_yes, p_no]` for similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Token(String),
    Probabilities([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    #[serde(rename = "id")]
    pub example_id: String,
    #[serde(rename = "text")]
    pub rendered: String,
    pub mask_offset: usize,
    #[serde(rename = "candidates")]
    pub candidate_tokens: Vec<String>,
    pub target: Target,
}

fn ends_with_terminal(s: &str) -> bool {
    s.trim_end().ends_with(TERMINAL_PUNCTUATION)
}

fn render_text(sent1: &str, sent2: &str, pattern: &str) -> String {
    let mut out = String::with_capacity(pattern.len() + sent1.len() + sent2.len());
    let mut rest = pattern;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix(SENT1) {
            out.push_str(sent1);
            rest = match after.strip_prefix('.') {
                Some(skipped) if ends_with_terminal(sent1) => skipped,
                _ => after,
            };
        } else if let Some(after) = tail.strip_prefix(SENT2) {
            out.push_str(sent2);
            rest = after;
        } else if let Some(after) = tail.strip_prefix(MASK_SLOT) {
            out.push_str(MASK);
            rest = after;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Renders `ex` into the template. The period after sentence one is dropped
/// when the sentence already ends in `.`, `!` or `?`.
pub fn render_prompt(ex: &Example, tpl: &PromptTemplate) -> Result<PromptInstance> {
    if ex.sentence1.trim().is_empty() {
        return Err(Error::InvalidArgument(format!("example {}: empty sentence1", ex.id)));
    }
    if ex.sentence2.trim().is_empty() {
        return Err(Error::InvalidArgument(format!("example {}: empty sentence2", ex.id)));
    }
    let rendered = render_text(&ex.sentence1, &ex.sentence2, &tpl.pattern);
    let mut masks = rendered.match_indices(MASK);
    let mask_offset = match (masks.next(), masks.next()) {
        (Some((at, _)), None) => at,
        _ => {
            return Err(Error::Template(format!(
                "example {}: rendered prompt must contain {MASK} exactly once",
                ex.id
            )))
        }
    };
    let target = match &ex.label {
        Label::Class(c) => Target::Token(tpl.verbalize(c)?.to_owned()),
        Label::Score(s) => {
            let (yes, no) = score_to_target(*s)?;
            Target::Probabilities([yes, no])
        }
    };
    Ok(PromptInstance {
        example_id: ex.id.clone(),
        rendered,
        mask_offset,
        candidate_tokens: tpl.tokens(),
        target,
    })
}

/// Maps a similarity score in [0, 5] to `(p_yes, p_no)` by linear
/// interpolation.
pub fn score_to_target(score: f64) -> Result<(f64, f64)> {
    if !(0.0..=Task::MAX_SCORE).contains(&score) {
        return Err(Error::InvalidArgument(format!("score {score} outside [0, 5]")));
    }
    let p_yes = score / Task::MAX_SCORE;
    Ok((p_yes, 1.0 - p_yes))
}

pub fn prediction_to_score(p_yes: f64, p_no: f64) -> Result<f64> {
    if !(p_yes >= 0.0 && p_no >= 0.0) || !p_yes.is_finite() || !p_no.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "probabilities must be finite and non-negative, got ({p_yes}, {p_no})"
        )));
    }
    let sum = p_yes + p_no;
    if sum <= 0.0 {
        return Err(Error::InvalidArgument("both probabilities are zero".into()));
    }
    Ok(Task::MAX_SCORE * p_yes / sum)
}

pub fn write_prompts<W: Write>(prompts: &[PromptInstance], mut out: W) -> std::io::Result<()> {
    for p in prompts {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_prompts(prompts: &[PromptInstance], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_prompts(prompts, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_prompts(path: &Path) -> Result<Vec<PromptInstance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::parse(&source, i + 1, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(&source, i + 1, e))?);
    }
    Ok(out)
}
