//! Dictionary entries from a pre-extracted JSONL lexicon, gloss cleanup and
//! medical-category filtering.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ABBREVIATION_TAGS: [&str; 3] = ["abbreviation", "initialism", "acronym"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictionaryEntry {
    pub headword: String,
    pub glosses: Vec<String>,
    pub tags: BTreeSet<String>,
    pub is_abbreviation: bool,
}

impl DictionaryEntry {
    pub fn new<G, T>(headword: &str, glosses: G, tags: T, abbrev: bool) -> Result<Self>
    where
        G: IntoIterator,
        G::Item: Into<String>,
        T: IntoIterator,
        T::Item: AsRef<str>,
    {
        if headword.trim().is_empty() {
            return Err(Error::InvalidArgument("empty headword".into()));
        }
        let tags: BTreeSet<String> = tags
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        let is_abbreviation = abbrev
            || tags.iter().any(|t| ABBREVIATION_TAGS.contains(&t.as_str()))
            || looks_like_abbreviation(headword);
        Ok(Self {
            headword: headword.to_owned(),
            glosses: glosses.into_iter().map(Into::into).collect(),
            tags,
            is_abbreviation,
        })
    }

    fn absorb(&mut self, other: DictionaryEntry) {
        self.glosses.extend(other.glosses);
        self.tags.extend(other.tags);
        self.is_abbreviation |= other.is_abbreviation;
    }
}

/// 2 to 6 characters, all uppercase letters.
pub fn looks_like_abbreviation(headword: &str) -> bool {
    let n = headword.chars().count();
    (2..=6).contains(&n) && headword.chars().all(|c| c.is_alphabetic() && c.is_uppercase())
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconRecord {
    word: String,
    glosses: Vec<String>,
    tags: Vec<String>,
    #[serde(default)]
    abbrev: bool,
}

/// Tag substrings that mark an entry as medical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedicalTagPolicy {
    substrings: Vec<String>,
}

impl MedicalTagPolicy {
    pub const DEFAULT: [&'static str; 5] = ["medical", "medicine", "disease", "symptom", "pharma"];

    pub fn new<I, S>(substrings: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let substrings: Vec<String> = substrings.into_iter().map(Into::into).collect();
        if substrings.is_empty() {
            return Err(Error::InvalidArgument("tag policy needs at least one substring".into()));
        }
        if let Some(bad) = substrings
            .iter()
            .find(|s| s.is_empty() || s.to_lowercase() != **s)
        {
            return Err(Error::InvalidArgument(format!(
                "tag policy substrings must be non-empty lowercase, got {bad:?}"
            )));
        }
        Ok(Self { substrings })
    }

    /// `"default"` or a comma-separated substring list.
    pub fn parse(spec: &str) -> Result<Self> {
        if spec == "default" {
            Ok(Self::default())
        } else {
            Self::new(spec.split(',').map(str::trim))
        }
    }

    pub fn substrings(&self) -> &[String] {
        &self.substrings
    }

    pub fn matches(&self, entry: &DictionaryEntry) -> bool {
        entry
            .tags
            .iter()
            .any(|tag| self.substrings.iter().any(|s| tag.contains(s.as_str())))
    }
}

impl Default for MedicalTagPolicy {
    fn default() -> Self {
        Self {
            substrings: Self::DEFAULT.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Parses lexicon JSONL, merging records that share a headword. The merged
/// entry sits at the headword's first position.
pub fn parse_entries(source: &Path) -> Result<Vec<DictionaryEntry>> {
    let file = File::open(source).map_err(|e| Error::io(source, e))?;
    parse_entries_from(BufReader::new(file), &source.display().to_string())
}

pub fn parse_entries_from<R: BufRead>(reader: R, source: &str) -> Result<Vec<DictionaryEntry>> {
    let mut merged: IndexMap<String, DictionaryEntry> = IndexMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source, lineno, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LexiconRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(source, lineno, e))?;
        let entry = DictionaryEntry::new(&rec.word, rec.glosses, rec.tags, rec.abbrev)
            .map_err(|e| Error::parse(source, lineno, e))?;
        match merged.get_mut(&entry.headword) {
            Some(existing) => existing.absorb(entry),
            None => {
                merged.insert(entry.headword.clone(), entry);
            }
        }
    }
    Ok(merged.into_values().collect())
}

pub fn write_entries<W: Write>(entries: &[DictionaryEntry], mut out: W) -> std::io::Result<()> {
    for e in entries {
        let rec = LexiconRecord {
            word: e.headword.clone(),
            glosses: e.glosses.clone(),
            tags: e.tags.iter().cloned().collect(),
            abbrev: e.is_abbreviation,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn filter_medical(entries: &[DictionaryEntry], policy: &MedicalTagPolicy) -> Vec<DictionaryEntry> {
    entries.iter().filter(|e| policy.matches(e)).cloned().collect()
}

fn strip_wiki_links(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(open) = rest.find("[[") {
        let Some(close) = rest[open + 2..].find("]]") else {
            break;
        };
        out.push_str(&rest[..open]);
        let inner = &rest[open + 2..open + 2 + close];
        out.push_str(inner.rsplit('|').next().unwrap_or(inner));
        rest = &rest[open + 2 + close + 2..];
    }
    out.push_str(rest);
    out.replace("[[", "").replace("]]", "")
}

fn normalize_once(s: &str) -> String {
    let unlinked = strip_wiki_links(s);
    let mut out = unlinked.split_whitespace().collect::<Vec<_>>().join(" ");
    if out.ends_with('.') && !out.ends_with("..") {
        out.pop();
        out.truncate(out.trim_end().len());
    }
    out
}

/// Drops wiki-link markup (keeping the displayed text), collapses
/// whitespace and removes a single trailing period. An ellipsis is kept.
pub fn normalize_gloss(gloss: &str) -> Result<String> {
    let mut current = normalize_once(gloss);
    loop {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        Err(Error::EmptyGloss)
    } else {
        Ok(current)
    }
}

/// Normalizes every gloss of `entry`, dropping glosses that normalize to
/// nothing and exact duplicates. Returns the number of dropped glosses.
pub fn normalize_entry(entry: &mut DictionaryEntry) -> usize {
    let before = entry.glosses.len();
    let mut seen = BTreeSet::new();
    entry.glosses = entry
        .glosses
        .iter()
        .filter_map(|g| normalize_gloss(g).ok())
        .filter(|g| seen.insert(g.clone()))
        .collect();
    before - entry.glosses.len()
}

/// Counts from [`prepare_medical`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrepareStats {
    pub input_entries: usize,
    pub non_medical: usize,
    pub no_gloss: usize,
    pub dropped_glosses: usize,
    pub kept: usize,
}

/// Tag filter, gloss normalization, and removal of entries left without a
/// usable gloss.
pub fn prepare_medical(
    entries: &[DictionaryEntry],
    policy: &MedicalTagPolicy,
) -> (Vec<DictionaryEntry>, PrepareStats) {
    let mut stats = PrepareStats {
        input_entries: entries.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for entry in entries {
        if !policy.matches(entry) {
            stats.non_medical += 1;
            continue;
        }
        let mut entry = entry.clone();
        stats.dropped_glosses += normalize_entry(&mut entry);
        if entry.glosses.is_empty() {
            stats.no_gloss += 1;
            continue;
        }
        kept.push(entry);
    }
    stats.kept = kept.len();
    (kept, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(word: &str, glosses: &[&str], tags: &[&str]) -> DictionaryEntry {
        DictionaryEntry::new(word, glosses.iter().copied(), tags.iter().copied(), false).unwrap()
    }

    #[test]
    fn parses_single_record() {
        let src = r#"{"word":"afebrile","glosses":["having no fever"],"tags":["medicine"],"abbrev":false}"#;
        let entries = parse_entries_from(src.as_bytes(), "mem").unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].glosses, ["having no fever"]);
        assert!(!entries[0].is_abbreviation);
    }

    #[test]
    fn merges_duplicate_headwords() {
        let src = concat!(
            r#"{"word":"CHF","glosses":["congestive heart failure"],"tags":["medicine"]}"#,
            "\n",
            r#"{"word":"fever","glosses":["a rise in body temperature"],"tags":["Symptom"]}"#,
            "\n",
            r#"{"word":"CHF","glosses":[],"tags":["initialism"]}"#,
            "\n"
        );
        let entries = parse_entries_from(src.as_bytes(), "mem").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].headword, "CHF");
        assert_eq!(entries[0].glosses, ["congestive heart failure"]);
        assert_eq!(
            entries[0].tags.iter().collect::<Vec<_>>(),
            ["initialism", "medicine"]
        );
        assert!(entries[0].is_abbreviation);
        assert!(entries[1].tags.contains("symptom"));
    }

    #[test]
    fn empty_file_gives_no_entries() {
        assert!(parse_entries_from(&b""[..], "mem").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = "{\"word\":\"a\",\"glosses\":[],\"tags\":[]}\n{not json\n";
        let err = parse_entries_from(src.as_bytes(), "lex.jsonl").unwrap_err();
        assert!(err.to_string().starts_with("lex.jsonl:2:"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let src = r#"{"word":"afebrile","tags":["medicine"]}"#;
        let err = parse_entries_from(src.as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().contains("glosses"), "{err}");
    }

    #[test]
    fn abbreviation_detection() {
        assert!(looks_like_abbreviation("CHF"));
        assert!(looks_like_abbreviation("COPD"));
        assert!(!looks_like_abbreviation("A"));
        assert!(!looks_like_abbreviation("ABCDEFG"));
        assert!(!looks_like_abbreviation("Chf"));
        assert!(!looks_like_abbreviation("H2O"));
        assert!(entry("mg", &["milligram"], &["acronym"]).is_abbreviation);
        assert!(!entry("fever", &["x"], &["medicine"]).is_abbreviation);
    }

    // Hand-built fixture: which entries should survive the default policy.
    #[test]
    fn filter_medical_fixture() {
        let fixture = [
            ("atropine", "pharmacology", true),
            ("oak", "botany", false),
            ("distemper", "veterinary medicine", true),
            ("measles", "diseases", true),
            ("cough", "symptoms", true),
            ("scalpel", "medical equipment", true),
            ("sonnet", "poetry", false),
            ("carburetor", "automotive", false),
            ("placebo", "pharmaceutical drugs", true),
            ("quark", "physics", false),
        ];
        let entries: Vec<_> = fixture
            .iter()
            .map(|(w, tag, _)| entry(w, &["g"], &[tag]))
            .collect();
        let kept = filter_medical(&entries, &MedicalTagPolicy::default());
        let expected: Vec<&str> = fixture.iter().filter(|f| f.2).map(|f| f.0).collect();
        let got: Vec<&str> = kept.iter().map(|e| e.headword.as_str()).collect();
        assert_eq!(got, expected);
        assert_eq!(filter_medical(&kept, &MedicalTagPolicy::default()), kept);
    }

    #[test]
    fn policy_validation() {
        assert!(MedicalTagPolicy::new(Vec::<String>::new()).is_err());
        assert!(MedicalTagPolicy::new(["Medical"]).is_err());
        assert_eq!(MedicalTagPolicy::parse("default").unwrap(), MedicalTagPolicy::default());
        assert_eq!(
            MedicalTagPolicy::parse("cardio, onco").unwrap().substrings(),
            ["cardio", "onco"]
        );
    }

    #[test]
    fn gloss_normalization() {
        assert_eq!(normalize_gloss("having no fever.").unwrap(), "having no fever");
        assert_eq!(
            normalize_gloss("  congestive   heart failure ").unwrap(),
            "congestive heart failure"
        );
        assert_eq!(normalize_gloss("[[fever|febrile]] state").unwrap(), "febrile state");
        assert!(matches!(normalize_gloss(" . "), Err(Error::EmptyGloss)));
        assert!(matches!(normalize_gloss(""), Err(Error::EmptyGloss)));
    }

    // Snippets shaped like extracted dump glosses, normalized by hand.
    #[test]
    fn gloss_dump_snippets() {
        let cases = [
            ("[[inflammation|Inflammation]] of the [[liver]].", "Inflammation of the liver"),
            ("A [[drug]] used to treat [[pain]]\t.", "A drug used to treat pain"),
            ("[[w:Heart|heart]]  [[failure]]", "heart failure"),
            ("Abnormally slow [[heartbeat]]...", "Abnormally slow heartbeat..."),
            ("(''medicine'') [[swelling]] caused by [[fluid]].", "(''medicine'') swelling caused by fluid"),
        ];
        for (raw, want) in cases {
            assert_eq!(normalize_gloss(raw).unwrap(), want, "{raw}");
        }
    }

    #[test]
    fn prepare_drops_and_counts() {
        let entries = vec![
            entry("afebrile", &["having no fever.", "having no fever"], &["medicine"]),
            entry("oak", &["a tree"], &["botany"]),
            entry("blank", &[" . "], &["medical"]),
        ];
        let (kept, stats) = prepare_medical(&entries, &MedicalTagPolicy::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].glosses, ["having no fever"]);
        assert_eq!(
            stats,
            PrepareStats {
                input_entries: 3,
                non_medical: 1,
                no_gloss: 1,
                dropped_glosses: 2,
                kept: 1
            }
        );
    }
}
