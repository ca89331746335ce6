//! Inserts ` (paraphrase)` after every whole-word occurrence of a mapped
//! word.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{AnnotationSpan, Dataset, Example, Split};
use crate::error::{Error, Result};
use crate::freqcount::{fold, token_spans};
use crate::selector::ParaphraseMap;

pub fn inserted_text(paraphrase: &str) -> String {
    format!(" ({paraphrase})")
}

#[derive(Debug, Clone, Copy)]
struct Target<'a> {
    headword: &'a str,
    paraphrase: &'a str,
}

/// Lookup tables for one map. Abbreviations match their exact surface, all
/// other words match case-insensitively. An exact abbreviation hit wins
/// over a folded hit.
#[derive(Debug)]
pub struct Matcher<'a> {
    exact: HashMap<&'a str, Target<'a>>,
    folded: HashMap<String, Target<'a>>,
}

/// One annotation site before insertion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match<'a> {
    pub start: usize,
    pub end: usize,
    pub headword: &'a str,
    pub paraphrase: &'a str,
}

impl<'a> Matcher<'a> {
    pub fn new(map: &'a ParaphraseMap) -> Self {
        let mut exact = HashMap::new();
        let mut folded = HashMap::new();
        for (headword, entry) in map.iter() {
            let target = Target {
                headword,
                paraphrase: &entry.paraphrase,
            };
            if entry.is_abbreviation {
                exact.insert(headword, target);
            } else {
                folded.entry(fold(headword)).or_insert(target);
            }
        }
        Self { exact, folded }
    }

    fn lookup(&self, surface: &str) -> Option<Target<'a>> {
        self.exact
            .get(surface)
            .copied()
            .or_else(|| self.folded.get(&fold(surface)).copied())
    }

    /// Every annotatable occurrence in `text`, in order.
    ///
    /// A word already followed by `(` (optionally after one space) is left
    /// alone. When what follows is exactly this word's own inserted text,
    /// the whole insertion is skipped as well.
    pub fn find(&self, text: &str) -> Vec<Match<'a>> {
        let mut out = Vec::new();
        let mut resume = 0;
        for (start, end) in token_spans(text) {
            if start < resume {
                continue;
            }
            let Some(target) = self.lookup(&text[start..end]) else {
                continue;
            };
            let rest = &text[end..];
            let own = inserted_text(target.paraphrase);
            if rest.starts_with(&own) {
                resume = end + own.len();
                continue;
            }
            if rest.starts_with('(') || rest.starts_with(" (") {
                continue;
            }
            out.push(Match {
                start,
                end,
                headword: target.headword,
                paraphrase: target.paraphrase,
            });
        }
        out
    }

    pub fn find_spans(&self, text: &str, sentence_index: u8) -> Vec<AnnotationSpan> {
        self.find(text)
            .into_iter()
            .map(|m| AnnotationSpan {
                sentence_index,
                offset: m.start,
                matched_surface: text[m.start..m.end].to_owned(),
                inserted_text: inserted_text(m.paraphrase),
            })
            .collect()
    }

    pub fn augment(&self, text: &str, sentence_index: u8) -> (String, Vec<AnnotationSpan>) {
        let spans = self.find_spans(text, sentence_index);
        let extra: usize = spans.iter().map(|s| s.inserted_text.len()).sum();
        let mut out = String::with_capacity(text.len() + extra);
        let mut cursor = 0;
        for span in &spans {
            let end = span.offset + span.matched_surface.len();
            out.push_str(&text[cursor..end]);
            out.push_str(&span.inserted_text);
            cursor = end;
        }
        out.push_str(&text[cursor..]);
        (out, spans)
    }
}

pub fn find_matches(text: &str, map: &ParaphraseMap) -> Vec<AnnotationSpan> {
    Matcher::new(map).find_spans(text, 1)
}

pub fn augment_text(text: &str, map: &ParaphraseMap) -> (String, Vec<AnnotationSpan>) {
    Matcher::new(map).augment(text, 1)
}

/// Removes the recorded insertions from `augmented`. Fails if an insertion
/// is not found where its span says it is.
pub fn strip_annotations(augmented: &str, spans: &[AnnotationSpan]) -> Result<String> {
    let mut out = String::with_capacity(augmented.len());
    let mut cursor = 0;
    let mut shift = 0;
    for span in spans {
        let at = span.offset + span.matched_surface.len() + shift;
        let end = at + span.inserted_text.len();
        if at < cursor || augmented.get(at..end) != Some(span.inserted_text.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "annotation {:?} not found at byte {at}",
                span.inserted_text
            )));
        }
        out.push_str(&augmented[cursor..at]);
        cursor = end;
        shift += span.inserted_text.len();
    }
    out.push_str(&augmented[cursor..]);
    Ok(out)
}

/// Annotation counts for one split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitAnnotations {
    pub distinct_words: BTreeSet<String>,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AugmentStats {
    pub per_split: BTreeMap<Split, SplitAnnotations>,
}

impl AugmentStats {
    pub fn total(&self) -> usize {
        self.per_split.values().map(|s| s.total).sum()
    }

    pub fn distinct(&self) -> usize {
        self.per_split
            .values()
            .flat_map(|s| s.distinct_words.iter())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "split\tdistinct\ttotal")?;
        for split in Split::ALL {
            let s = self.per_split.get(&split).cloned().unwrap_or_default();
            writeln!(out, "{split}\t{}\t{}", s.distinct_words.len(), s.total)?;
        }
        writeln!(out, "all\t{}\t{}", self.distinct(), self.total())?;
        out.flush()
    }
}

fn record(stats: &mut BTreeMap<Split, SplitAnnotations>, split: Split, words: &[&str]) {
    let entry = stats.entry(split).or_default();
    entry.total += words.len();
    entry.distinct_words.extend(words.iter().map(|w| w.to_string()));
}

/// Per-split annotation counts without building augmented text.
pub fn count_annotations(ds: &Dataset, matcher: &Matcher<'_>) -> BTreeMap<Split, SplitAnnotations> {
    let mut stats = BTreeMap::new();
    for ex in &ds.examples {
        let words: Vec<&str> = matcher
            .find(&ex.sentence1)
            .into_iter()
            .chain(matcher.find(&ex.sentence2))
            .map(|m| m.headword)
            .collect();
        record(&mut stats, ex.split, &words);
    }
    stats
}

fn augment_example(ex: &Example, matcher: &Matcher<'_>) -> (Example, Vec<String>) {
    let m1 = matcher.find(&ex.sentence1);
    let m2 = matcher.find(&ex.sentence2);
    let words: Vec<String> = m1.iter().chain(&m2).map(|m| m.headword.to_owned()).collect();
    if words.is_empty() {
        return (ex.clone(), words);
    }
    let (s1, mut spans) = matcher.augment(&ex.sentence1, 1);
    let (s2, spans2) = matcher.augment(&ex.sentence2, 2);
    spans.extend(spans2);
    let out = Example {
        sentence1: s1,
        sentence2: s2,
        augmented: true,
        annotations: Some(spans),
        ..ex.clone()
    };
    (out, words)
}

/// Annotates both sentences of every example. Examples without a match are
/// passed through unchanged. Output order follows input order.
pub fn augment_dataset(ds: &Dataset, map: &ParaphraseMap) -> Result<(Dataset, AugmentStats)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let matcher = Matcher::new(map);
    let results: Vec<(Example, Vec<String>)> = ds
        .examples
        .par_iter()
        .map(|ex| augment_example(ex, &matcher))
        .collect();
    let mut stats = AugmentStats::default();
    let mut examples = Vec::with_capacity(results.len());
    for (ex, words) in results {
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        record(&mut stats.per_split, ex.split, &refs);
        examples.push(ex);
    }
    let out = Dataset {
        name: ds.name.clone(),
        examples,
    };
    Ok((out, stats))
}
