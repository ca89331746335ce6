//! Scorers: the deterministic in-process mock and the external-process
//! protocol driver.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalstats::PredictionRecord;
use crate::freqcount::tokenize;
use crate::promptfmt::{PromptInstance, Target, MASK};

/// Stand-in for `ln(0)` in log-domain scores; `exp` of it is exactly zero.
pub const LOG_ZERO: f64 = -1e9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockMode {
    #[default]
    Oracle,
    LexicalOverlap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScorerPolicy {
    #[serde(default)]
    pub mode: MockMode,
    #[serde(default)]
    pub paraphrase_bonus: f64,
}

impl MockScorerPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.paraphrase_bonus >= 0.0 && self.paraphrase_bonus.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "paraphrase_bonus must be finite and >= 0, got {}",
                self.paraphrase_bonus
            )));
        }
        Ok(())
    }
}

fn ln_or_floor(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        LOG_ZERO
    }
}

/// Splits a rendered prompt into the text before and after the mask.
fn prompt_halves(instance: &PromptInstance) -> (&str, &str) {
    let text = &instance.rendered;
    let at = instance.mask_offset.min(text.len());
    match (text.get(..at), text.get(at + MASK.len()..)) {
        (Some(a), Some(b)) => (a, b),
        _ => (text.as_str(), ""),
    }
}

/// Byte ranges of `text` enclosed in parentheses, outermost level.
fn parenthesized(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut open = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => {
                if depth == 0 {
                    open = i;
                }
                depth += 1;
            }
            ')' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push((open, i));
                }
            }
            _ => {}
        }
    }
    out
}

/// Share of the second sentence's distinct words that also occur in the
/// first, plus `bonus` times the share matched only inside parentheses of
/// the first sentence. Capped at 1.
pub fn overlap_yes_probability(instance: &PromptInstance, bonus: f64) -> f64 {
    let (first, second) = prompt_halves(instance);
    let hypothesis: BTreeSet<String> = tokenize(second).into_iter().map(|t| t.into_string()).collect();
    if hypothesis.is_empty() {
        return 0.0;
    }
    let groups = parenthesized(first);
    let mut outside = String::with_capacity(first.len());
    let mut inside = String::new();
    let mut cursor = 0;
    for (a, b) in groups {
        outside.push_str(&first[cursor..a]);
        outside.push(' ');
        inside.push_str(&first[a..=b]);
        inside.push(' ');
        cursor = b + 1;
    }
    outside.push_str(&first[cursor..]);
    let plain: BTreeSet<String> = tokenize(&outside).into_iter().map(|t| t.into_string()).collect();
    let glossed: BTreeSet<String> = tokenize(&inside).into_iter().map(|t| t.into_string()).collect();
    let n = hypothesis.len() as f64;
    let covered = hypothesis
        .iter()
        .filter(|t| plain.contains(*t) || glossed.contains(*t))
        .count() as f64;
    let gloss_only = hypothesis
        .iter()
        .filter(|t| !plain.contains(*t) && glossed.contains(*t))
        .count() as f64;
    ((covered + bonus * gloss_only) / n).min(1.0)
}

/// Deterministic stand-in for a masked-LM scorer.
///
/// Classification prompts get plain scores: the oracle puts 1 on the gold
/// token and 0 elsewhere; lexical overlap scores Yes with
/// [`overlap_yes_probability`], No with its complement and the remaining
/// candidates with the smaller of the two. Similarity prompts get
/// natural-log probabilities for `[Yes, No]`, which evaluation turns back
/// into a score.
pub fn mock_score(instance: &PromptInstance, gold: &Target, policy: &MockScorerPolicy) -> PredictionRecord {
    let candidates = &instance.candidate_tokens;
    let mut scores = BTreeMap::new();
    match (policy.mode, gold) {
        (MockMode::Oracle, Target::Token(want)) => {
            for c in candidates {
                scores.insert(c.clone(), if c == want { 1.0 } else { 0.0 });
            }
        }
        (MockMode::Oracle, Target::Probabilities(p)) => {
            for (c, &prob) in candidates.iter().zip(p) {
                scores.insert(c.clone(), ln_or_floor(prob));
            }
        }
        (MockMode::LexicalOverlap, Target::Token(_)) => {
            let yes = overlap_yes_probability(instance, policy.paraphrase_bonus);
            let no = 1.0 - yes;
            for c in candidates {
                let s = match c.as_str() {
                    "Yes" => yes,
                    "No" => no,
                    _ => yes.min(no),
                };
                scores.insert(c.clone(), s);
            }
        }
        (MockMode::LexicalOverlap, Target::Probabilities(_)) => {
            let yes = overlap_yes_probability(instance, policy.paraphrase_bonus);
            for (c, prob) in candidates.iter().zip([yes, 1.0 - yes]) {
                scores.insert(c.clone(), ln_or_floor(prob));
            }
        }
    }
    PredictionRecord {
        example_id: instance.example_id.clone(),
        scores,
    }
}

pub fn mock_score_all(prompts: &[PromptInstance], policy: &MockScorerPolicy) -> Vec<PredictionRecord> {
    prompts
        .iter()
        .map(|p| mock_score(p, &p.target, policy))
        .collect()
}

/// Runs `<command...> --in <prompts> --out <preds>` and waits for it.
/// `env` is passed through to the child process.
pub fn run_external(
    command: &[String],
    prompts: &Path,
    preds: &Path,
    env: &[(&str, String)],
) -> Result<()> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| Error::Scorer("empty scorer command".into()))?;
    let status = Command::new(program)
        .args(args)
        .arg("--in")
        .arg(prompts)
        .arg("--out")
        .arg(preds)
        .envs(env.iter().map(|(k, v)| (*k, v.as_str())))
        .status()
        .map_err(|e| Error::Scorer(format!("could not start {program}: {e}")))?;
    if !status.success() {
        return Err(Error::Scorer(format!("{program} exited with {status}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Example, Label, Split};
    use crate::promptfmt::{render_prompt, PromptTemplate};

    fn nli(s1: &str, s2: &str) -> PromptInstance {
        let ex = Example::new("x", s1, s2, Label::Class("entailment".into()), Split::Test);
        render_prompt(&ex, &PromptTemplate::mednli()).unwrap()
    }

    #[test]
    fn oracle_puts_all_mass_on_gold() {
        let p = nli("a", "b");
        let r = mock_score(&p, &Target::Token("Yes".into()), &MockScorerPolicy::default());
        assert_eq!(r.scores["Yes"], 1.0);
        assert_eq!(r.scores["No"], 0.0);
        assert_eq!(r.scores["maybe"], 0.0);
    }

    #[test]
    fn overlap_identical_sentences_is_maximal() {
        let p = nli("The patient has a fever", "The patient has a fever");
        let policy = MockScorerPolicy {
            mode: MockMode::LexicalOverlap,
            paraphrase_bonus: 0.0,
        };
        let r = mock_score(&p, &p.target, &policy);
        assert_eq!(r.scores["Yes"], 1.0);
    }

    #[test]
    fn paraphrase_raises_overlap() {
        let raw = nli("Patient is afebrile", "Patient has no fever");
        let aug = nli("Patient is afebrile (having no fever)", "Patient has no fever");
        let policy = MockScorerPolicy {
            mode: MockMode::LexicalOverlap,
            paraphrase_bonus: 0.5,
        };
        // hypothesis words {patient, has, no, fever}; raw covers 1, augmented
        // covers 3 of which 2 only inside the parentheses.
        assert_eq!(overlap_yes_probability(&raw, 0.5), 0.25);
        assert_eq!(overlap_yes_probability(&aug, 0.5), 1.0);
        assert_eq!(overlap_yes_probability(&aug, 0.0), 0.75);
        let a = mock_score(&aug, &aug.target, &policy).scores["Yes"];
        let b = mock_score(&raw, &raw.target, &policy).scores["Yes"];
        assert!(a > b);
    }

    #[test]
    fn sts_oracle_is_log_domain() {
        let ex = Example::new("s", "a", "b", Label::Score(4.0), Split::Test);
        let p = render_prompt(&ex, &PromptTemplate::medsts()).unwrap();
        let r = mock_score(&p, &p.target, &MockScorerPolicy::default());
        assert!((r.scores["Yes"] - 0.8f64.ln()).abs() < 1e-15);
        let ex = Example::new("s", "a", "b", Label::Score(5.0), Split::Test);
        let p = render_prompt(&ex, &PromptTemplate::medsts()).unwrap();
        let r = mock_score(&p, &p.target, &MockScorerPolicy::default());
        assert_eq!(r.scores["No"], LOG_ZERO);
    }

    #[test]
    fn bonus_must_be_non_negative() {
        let bad = MockScorerPolicy {
            mode: MockMode::LexicalOverlap,
            paraphrase_bonus: -1.0,
        };
        assert!(bad.validate().is_err());
    }
}
