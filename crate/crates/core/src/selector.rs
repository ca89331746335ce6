//! Rare-word selection and the final word → paraphrase map.
//!
//! An entry is kept when (a) its headword is rare or it is an abbreviation,
//! (b) it has exactly one gloss, and (c) that gloss contains no rare word
//! other than the headword. Failing entries are counted under the first rule
//! they break.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::freqcount::{tokenize, FrequencyTable};
use crate::lexicon::DictionaryEntry;

pub const DEFAULT_THRESHOLD: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorConfig {
    threshold: u64,
}

impl SelectorConfig {
    pub fn new(threshold: u64) -> Result<Self> {
        if threshold == 0 {
            return Err(Error::InvalidArgument("threshold must be at least 1".into()));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Strictly below the threshold. Absent words have count 0.
pub fn is_rare(table: &FrequencyTable, word: &str, config: &SelectorConfig) -> bool {
    table.count(word) < config.threshold
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub paraphrase: String,
    pub is_abbreviation: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub frequency_table: String,
    pub lexicon: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParaphraseMap {
    entries: BTreeMap<String, MapEntry>,
    config: Option<SelectorConfig>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct MapRecord {
    word: String,
    paraphrase: String,
    abbrev: bool,
}

impl ParaphraseMap {
    pub fn from_entries<I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (String, MapEntry)>,
    {
        Self {
            entries: entries.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, headword: &str) -> Option<&MapEntry> {
        self.entries.get(headword)
    }

    /// Entries in headword order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &MapEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// The configuration the map was selected under; `None` for maps read
    /// back from JSONL.
    pub fn config(&self) -> Option<&SelectorConfig> {
        self.config.as_ref()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (word, e) in &self.entries {
            let rec = MapRecord {
                word: word.clone(),
                paraphrase: e.paraphrase.clone(),
                abbrev: e.is_abbreviation,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(source, i + 1, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MapRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(source, i + 1, e))?;
            let entry = MapEntry {
                paraphrase: rec.paraphrase,
                is_abbreviation: rec.abbrev,
            };
            if entries.insert(rec.word.clone(), entry).is_some() {
                return Err(Error::parse(source, i + 1, format!("duplicate word {:?}", rec.word)));
            }
        }
        Ok(Self {
            entries,
            config: None,
            provenance: Provenance::default(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file), &path.display().to_string())
    }
}

/// Per-rule exclusion counts of one selection run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SelectionStats {
    pub candidates: usize,
    pub included: usize,
    /// Headwords that are not a single word (phrases).
    pub multi_word: usize,
    /// Rule (a): count at or above the threshold and not an abbreviation.
    pub not_rare: usize,
    /// Rule (b): more than one gloss.
    pub multi_gloss: usize,
    /// Rule (c): gloss contains another rare word.
    pub rare_gloss_token: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    MultiWord,
    NotRare,
    MultiGloss,
    RareGlossToken,
}

fn single_word(headword: &str) -> Option<String> {
    let tokens = tokenize(headword);
    match tokens.as_slice() {
        [only] => Some(only.as_str().to_owned()),
        _ => None,
    }
}

/// The first rule `entry` breaks, or `None` if it qualifies.
pub fn check_entry(
    table: &FrequencyTable,
    entry: &DictionaryEntry,
    config: &SelectorConfig,
) -> Option<Exclusion> {
    let Some(word) = single_word(&entry.headword) else {
        return Some(Exclusion::MultiWord);
    };
    if !entry.is_abbreviation && !is_rare(table, &word, config) {
        return Some(Exclusion::NotRare);
    }
    if entry.glosses.len() != 1 {
        return Some(Exclusion::MultiGloss);
    }
    let rare_in_gloss = tokenize(&entry.glosses[0])
        .iter()
        .any(|t| t.as_str() != word && is_rare(table, t.as_str(), config));
    if rare_in_gloss {
        return Some(Exclusion::RareGlossToken);
    }
    None
}

pub fn build_paraphrase_map(
    table: &FrequencyTable,
    medical: &[DictionaryEntry],
    config: &SelectorConfig,
) -> Result<(ParaphraseMap, SelectionStats)> {
    if table.total_tokens() == 0 {
        return Err(Error::EmptyTable);
    }
    let mut stats = SelectionStats {
        candidates: medical.len(),
        ..Default::default()
    };
    let mut entries = BTreeMap::new();
    for entry in medical {
        match check_entry(table, entry, config) {
            Some(Exclusion::MultiWord) => stats.multi_word += 1,
            Some(Exclusion::NotRare) => stats.not_rare += 1,
            Some(Exclusion::MultiGloss) => stats.multi_gloss += 1,
            Some(Exclusion::RareGlossToken) => stats.rare_gloss_token += 1,
            None => {
                let value = MapEntry {
                    paraphrase: entry.glosses[0].clone(),
                    is_abbreviation: entry.is_abbreviation,
                };
                if entries.insert(entry.headword.clone(), value).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate headword {:?}",
                        entry.headword
                    )));
                }
            }
        }
    }
    stats.included = entries.len();
    let map = ParaphraseMap {
        entries,
        config: Some(*config),
        provenance: Provenance::default(),
    };
    Ok((map, stats))
}

/// Checks every map entry against the map invariants, returning one message
/// per violation.
pub fn audit(map: &ParaphraseMap, table: &FrequencyTable, config: &SelectorConfig) -> Vec<String> {
    let mut violations = Vec::new();
    for (headword, entry) in map.iter() {
        let Some(word) = single_word(headword) else {
            violations.push(format!("{headword}: not a single word"));
            continue;
        };
        if !entry.is_abbreviation && !is_rare(table, &word, config) {
            violations.push(format!(
                "{headword}: count {} not below threshold {}",
                table.count(&word),
                config.threshold()
            ));
        }
        if entry.paraphrase.trim().is_empty() {
            violations.push(format!("{headword}: empty paraphrase"));
        }
        for t in tokenize(&entry.paraphrase) {
            if t.as_str() != word && is_rare(table, t.as_str(), config) {
                violations.push(format!("{headword}: paraphrase token {t:?} is rare"));
            }
        }
    }
    violations
}

/// Single-word, non-abbreviation headwords whose count is below the
/// threshold.
pub fn rare_headwords(
    table: &FrequencyTable,
    medical: &[DictionaryEntry],
    config: &SelectorConfig,
) -> BTreeSet<String> {
    medical
        .iter()
        .filter(|e| !e.is_abbreviation)
        .filter_map(|e| single_word(&e.headword).map(|w| (e, w)))
        .filter(|(_, w)| is_rare(table, w, config))
        .map(|(e, _)| e.headword.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitCount {
    pub dataset: String,
    pub split: Split,
    pub distinct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub threshold: u64,
    pub map_size: usize,
    pub rare_words: usize,
    pub stats: SelectionStats,
    pub splits: Vec<SplitCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec![
            "threshold".to_string(),
            "map_size".into(),
            "rare_words".into(),
            "excluded_not_rare".into(),
            "excluded_multi_gloss".into(),
            "excluded_rare_gloss".into(),
        ];
        if let Some(first) = self.rows.first() {
            for s in &first.splits {
                header.push(format!("{}.{}.distinct", s.dataset, s.split));
                header.push(format!("{}.{}.total", s.dataset, s.split));
            }
        }
        writeln!(out, "{}", header.join("\t"))?;
        for row in &self.rows {
            let mut cells = vec![
                row.threshold.to_string(),
                row.map_size.to_string(),
                row.rare_words.to_string(),
                row.stats.not_rare.to_string(),
                row.stats.multi_gloss.to_string(),
                row.stats.rare_gloss_token.to_string(),
            ];
            for s in &row.splits {
                cells.push(s.distinct.to_string());
                cells.push(s.total.to_string());
            }
            writeln!(out, "{}", cells.join("\t"))?;
        }
        out.flush()
    }
}

/// Parses `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_thresholds(spec: &str) -> Result<Vec<u64>> {
    let bad = |what: &str| Error::InvalidArgument(format!("bad threshold spec {spec:?}: {what}"));
    let parse = |s: &str| s.trim().parse::<u64>().map_err(|e| bad(&e.to_string()));
    let parts: Vec<&str> = spec.split(':').collect();
    let out = match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step) = (parse(start)?, parse(end)?, parse(step)?);
            if step == 0 || start > end {
                return Err(bad("need start <= end and step > 0"));
            }
            (start..=end).step_by(step as usize).collect()
        }
        [list] => list.split(',').map(parse).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad("expected start:end:step or a comma list")),
    };
    Ok(out)
}

pub fn sweep_thresholds(
    table: &FrequencyTable,
    medical: &[DictionaryEntry],
    thresholds: &[u64],
    datasets: &[Dataset],
) -> Result<SweepReport> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("no thresholds given".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "thresholds must be strictly increasing".into(),
        ));
    }
    let rows = thresholds
        .par_iter()
        .map(|&threshold| {
            let config = SelectorConfig::new(threshold)?;
            let (map, stats) = build_paraphrase_map(table, medical, &config)?;
            let matcher = augment::Matcher::new(&map);
            let mut splits = Vec::new();
            for ds in datasets {
                let counts = augment::count_annotations(ds, &matcher);
                for split in Split::ALL {
                    let c = counts.get(&split).cloned().unwrap_or_default();
                    splits.push(SplitCount {
                        dataset: ds.name.clone(),
                        split,
                        distinct: c.distinct_words.len(),
                        total: c.total,
                    });
                }
            }
            Ok(SweepRow {
                threshold,
                map_size: map.len(),
                rare_words: rare_headwords(table, medical, &config).len(),
                stats,
                splits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(word: &str, glosses: &[&str], abbrev: bool) -> DictionaryEntry {
        DictionaryEntry::new(word, glosses.iter().copied(), ["medicine"], abbrev).unwrap()
    }

    fn table(counts: &[(&str, u64)]) -> FrequencyTable {
        FrequencyTable::from_counts(counts.iter().map(|&(w, c)| (w, c)), vec!["t".into()]).unwrap()
    }

    fn common<'a>(words: &[&'a str]) -> Vec<(&'a str, u64)> {
        words.iter().map(|&w| (w, 1_000_000)).collect()
    }

    #[test]
    fn rarity_boundary() {
        let t = table(&[("afebrile", 199_999), ("fever", 200_000)]);
        let cfg = SelectorConfig::default();
        assert!(is_rare(&t, "afebrile", &cfg));
        assert!(!is_rare(&t, "fever", &cfg));
        assert!(is_rare(&t, "absent", &cfg));
        assert!(SelectorConfig::new(0).is_err());
    }

    #[test]
    fn selection_rules() {
        let mut counts = common(&["having", "no", "fever", "congestive", "heart", "failure", "a", "of"]);
        counts.extend([("afebrile", 100_000), ("chf", 500_000), ("cyanosis", 10), ("rigor", 3)]);
        counts.push(("pyrexia", 5));
        counts.push(("stiffness", 10));
        let t = table(&counts);
        let medical = vec![
            entry("afebrile", &["having no fever"], false),
            entry("CHF", &["congestive heart failure"], false),
            entry("cyanosis", &["a blue tint", "a sign of hypoxia"], false),
            entry("rigor", &["stiffness"], false),
            entry("fever", &["a fever"], false),
            entry("heart failure", &["failure of heart"], false),
        ];
        assert!(medical[1].is_abbreviation);
        let (map, stats) = build_paraphrase_map(&t, &medical, &SelectorConfig::default()).unwrap();
        assert_eq!(map.iter().map(|(w, _)| w).collect::<Vec<_>>(), ["CHF", "afebrile"]);
        assert_eq!(map.get("afebrile").unwrap().paraphrase, "having no fever");
        assert!(map.get("CHF").unwrap().is_abbreviation);
        assert_eq!(
            stats,
            SelectionStats {
                candidates: 6,
                included: 2,
                multi_word: 1,
                not_rare: 1,
                multi_gloss: 1,
                rare_gloss_token: 1,
            }
        );
        assert!(audit(&map, &t, &SelectorConfig::default()).is_empty());
    }

    #[test]
    fn gloss_mentioning_headword_is_allowed() {
        let mut counts = common(&["the", "state", "of", "being"]);
        counts.push(("afebrile", 5));
        let t = table(&counts);
        let medical = vec![entry("afebrile", &["the state of being afebrile"], false)];
        let (map, _) = build_paraphrase_map(&t, &medical, &SelectorConfig::default()).unwrap();
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn multi_gloss_abbreviation_excluded() {
        let t = table(&common(&["pulmonary", "artery", "physician", "assistant"]));
        let medical = vec![entry("PA", &["pulmonary artery", "physician assistant"], true)];
        let (map, stats) = build_paraphrase_map(&t, &medical, &SelectorConfig::default()).unwrap();
        assert!(map.is_empty());
        assert_eq!(stats.multi_gloss, 1);
    }

    #[test]
    fn empty_inputs() {
        let t = table(&[("x", 1)]);
        let (map, stats) = build_paraphrase_map(&t, &[], &SelectorConfig::default()).unwrap();
        assert!(map.is_empty());
        assert_eq!(stats.candidates, 0);
        assert!(matches!(
            build_paraphrase_map(&FrequencyTable::new(), &[], &SelectorConfig::default()),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn threshold_specs() {
        assert_eq!(
            parse_thresholds("20000:200000:20000").unwrap(),
            (1..=10).map(|i| i * 20_000).collect::<Vec<u64>>()
        );
        assert_eq!(parse_thresholds("50,500").unwrap(), [50, 500]);
        assert!(parse_thresholds("5:1:1").is_err());
        assert!(parse_thresholds("1:5:0").is_err());
        assert!(parse_thresholds("a").is_err());
    }

    #[test]
    fn sweep_rejects_unsorted() {
        let t = table(&[("x", 1)]);
        assert!(sweep_thresholds(&t, &[], &[], &[]).is_err());
        assert!(sweep_thresholds(&t, &[], &[5, 5], &[]).is_err());
        assert!(sweep_thresholds(&t, &[], &[0], &[]).is_err());
    }

    #[test]
    fn map_jsonl_is_sorted_and_reloads() {
        let map = ParaphraseMap::from_entries([
            ("b".to_string(), MapEntry { paraphrase: "bee".into(), is_abbreviation: false }),
            ("A".to_string(), MapEntry { paraphrase: "ay".into(), is_abbreviation: true }),
        ]);
        let mut buf = Vec::new();
        map.write_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"word\":\"A\",\"paraphrase\":\"ay\",\"abbrev\":true}\n{\"word\":\"b\",\"paraphrase\":\"bee\",\"abbrev\":false}\n"
        );
        let back = ParaphraseMap::read_jsonl(&buf[..], "mem").unwrap();
        assert_eq!(back, map);
    }
}
