//! Checks a scorer's prediction file against the prompts it was given.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::promptfmt::{load_prompts, PromptInstance};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Malformed { line: usize, message: String },
    UnknownId { line: usize, id: String },
    DuplicateId { line: usize, id: String },
    MissingPrediction { id: String },
    UnknownCandidate { line: usize, id: String, token: String },
    IncompleteCandidates { line: usize, id: String, missing: Vec<String> },
    NonNumericScore { line: usize, id: String, token: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Malformed { line, message } => write!(f, "line {line}: malformed record: {message}"),
            Violation::UnknownId { line, id } => write!(f, "line {line}: unknown id {id:?}"),
            Violation::DuplicateId { line, id } => write!(f, "line {line}: duplicate id {id:?}"),
            Violation::MissingPrediction { id } => write!(f, "missing prediction for id {id:?}"),
            Violation::UnknownCandidate { line, id, token } => {
                write!(f, "line {line}: id {id:?} scores unknown candidate {token:?}")
            }
            Violation::IncompleteCandidates { line, id, missing } => {
                write!(f, "line {line}: id {id:?} incomplete candidates, missing {missing:?}")
            }
            Violation::NonNumericScore { line, id, token } => {
                write!(f, "line {line}: id {id:?} non-numeric score for {token:?}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Validates prediction lines against `prompts`. Every prompt needs exactly
/// one record scoring each of its candidates with a finite number.
pub fn validate_lines<I, S>(prompts: &[PromptInstance], lines: I) -> ValidationReport
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let by_id: HashMap<&str, &PromptInstance> =
        prompts.iter().map(|p| (p.example_id.as_str(), p)).collect();
    let mut seen = BTreeSet::new();
    let mut report = ValidationReport::default();
    for (i, line) in lines.into_iter().enumerate() {
        let line_no = i + 1;
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let malformed = |message: String| Violation::Malformed { line: line_no, message };
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                report.violations.push(malformed(e.to_string()));
                continue;
            }
        };
        let Some(id) = value.get("id").and_then(Value::as_str) else {
            report.violations.push(malformed("missing string field \"id\"".into()));
            continue;
        };
        let Some(scores) = value.get("scores").and_then(Value::as_object) else {
            report.violations.push(malformed("missing object field \"scores\"".into()));
            continue;
        };
        let Some(prompt) = by_id.get(id) else {
            report.violations.push(Violation::UnknownId {
                line: line_no,
                id: id.into(),
            });
            continue;
        };
        if !seen.insert(id.to_owned()) {
            report.violations.push(Violation::DuplicateId {
                line: line_no,
                id: id.into(),
            });
            continue;
        }
        for (token, score) in scores {
            if !prompt.candidate_tokens.contains(token) {
                report.violations.push(Violation::UnknownCandidate {
                    line: line_no,
                    id: id.into(),
                    token: token.clone(),
                });
            } else if !score.as_f64().is_some_and(f64::is_finite) {
                report.violations.push(Violation::NonNumericScore {
                    line: line_no,
                    id: id.into(),
                    token: token.clone(),
                });
            }
        }
        let missing: Vec<String> = prompt
            .candidate_tokens
            .iter()
            .filter(|c| !scores.contains_key(*c))
            .cloned()
            .collect();
        if !missing.is_empty() {
            report.violations.push(Violation::IncompleteCandidates {
                line: line_no,
                id: id.into(),
                missing,
            });
        }
    }
    for p in prompts {
        if !seen.contains(&p.example_id) {
            report.violations.push(Violation::MissingPrediction {
                id: p.example_id.clone(),
            });
        }
    }
    report
}

pub fn validate_protocol(prompts_path: &Path, preds_path: &Path) -> Result<ValidationReport> {
    let prompts = load_prompts(prompts_path)?;
    let file = File::open(preds_path).map_err(|e| Error::io(preds_path, e))?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(preds_path, e))?;
    Ok(validate_lines(&prompts, lines))
}
