//! Exact word-frequency counting over line-oriented corpora.
//!
//! Words are maximal runs of Unicode letters and digits, joined across a
//! single internal hyphen or apostrophe, lowercase-folded. Everything else
//! separates words. Counting is exact and independent of how the input is
//! partitioned across threads.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;

use crate::error::{Error, Result};

const LINES_PER_BATCH: usize = 16_384;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// A lowercase-folded word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    /// Validates `surface` against the token rules. The surface must already
    /// be folded and must segment to exactly itself.
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if is_valid_token(&surface) {
            Ok(Token(surface))
        } else {
            Err(Error::InvalidArgument(format!("not a token: {surface:?}")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}')
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn is_valid_token(s: &str) -> bool {
    let mut spans = token_spans(s);
    match (spans.next(), spans.next()) {
        (Some((0, end)), None) if end == s.len() => fold(s) == s,
        _ => false,
    }
}

/// Byte ranges of the word surfaces in `text`, in order.
pub fn token_spans(text: &str) -> TokenSpans<'_> {
    TokenSpans { text, pos: 0 }
}

pub struct TokenSpans<'a> {
    text: &'a str,
    pos: usize,
}

impl Iterator for TokenSpans<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        let rest = &self.text[self.pos..];
        let (offset, _) = rest.char_indices().find(|&(_, c)| is_word_char(c))?;
        let start = self.pos + offset;
        let mut chars = self.text[start..].char_indices().peekable();
        let mut end = start;
        while let Some((i, c)) = chars.next() {
            if is_word_char(c) {
                end = start + i + c.len_utf8();
            } else if is_joiner(c) && matches!(chars.peek(), Some(&(_, n)) if is_word_char(n)) {
                continue;
            } else {
                break;
            }
        }
        self.pos = end;
        Some((start, end))
    }
}

/// Lowercase fold of a word surface. Curly apostrophes become ASCII ones and
/// characters that case mapping turns into non-word characters are dropped.
pub fn fold(surface: &str) -> String {
    let mut out = String::with_capacity(surface.len());
    fold_into(surface, &mut out);
    out
}

fn fold_into(surface: &str, out: &mut String) {
    out.clear();
    for c in surface.chars() {
        if is_joiner(c) {
            out.push(if c == '-' { '-' } else { '\'' });
            continue;
        }
        for lc in c.to_lowercase() {
            if is_word_char(lc) {
                out.push(lc);
            }
        }
    }
}

fn for_each_token(line: &str, buf: &mut String, mut f: impl FnMut(&str)) {
    for (start, end) in token_spans(line) {
        fold_into(&line[start..end], buf);
        if !buf.is_empty() {
            f(buf);
        }
    }
}

pub fn tokenize(line: &str) -> Vec<Token> {
    let mut buf = String::new();
    let mut out = Vec::new();
    for_each_token(line, &mut buf, |t| out.push(Token(t.to_owned())));
    out
}

/// Word counts over a corpus collection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    total_tokens: u64,
    corpus_ids: Vec<String>,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts a single in-memory text, recorded under `corpus_id`.
    pub fn from_text(corpus_id: impl Into<String>, text: &str) -> Self {
        let mut table = Self::new();
        table.add_lines(text.lines());
        table.corpus_ids.push(corpus_id.into());
        table
    }

    /// Builds a table from raw counts. The total is the sum of counts.
    pub fn from_counts<I, S>(counts: I, corpus_ids: Vec<String>) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut table = Self {
            corpus_ids,
            ..Self::default()
        };
        for (word, count) in counts {
            let word = word.into();
            if !is_valid_token(&word) {
                return Err(Error::InvalidArgument(format!("not a token: {word:?}")));
            }
            *table.counts.entry(word).or_insert(0) += count;
            table.total_tokens += count;
        }
        table.counts.retain(|_, c| *c > 0);
        Ok(table)
    }

    pub fn add_lines<'a>(&mut self, lines: impl IntoIterator<Item = &'a str>) {
        let mut buf = String::new();
        for line in lines {
            for_each_token(line, &mut buf, |t| {
                self.total_tokens += 1;
                match self.counts.get_mut(t) {
                    Some(c) => *c += 1,
                    None => {
                        self.counts.insert(t.to_owned(), 1);
                    }
                }
            });
        }
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn corpus_ids(&self) -> &[String] {
        &self.corpus_ids
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Entries sorted by count descending, then token ascending.
    pub fn sorted(&self) -> Vec<(&str, u64)> {
        let mut rows: Vec<_> = self.iter().collect();
        rows.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows
    }

    /// Pointwise sum. Corpus ids are concatenated, `self` first.
    pub fn merge(mut self, other: FrequencyTable) -> FrequencyTable {
        let (mut big, small) = if self.counts.len() >= other.counts.len() {
            (std::mem::take(&mut self.counts), other.counts)
        } else {
            (other.counts, std::mem::take(&mut self.counts))
        };
        for (word, count) in small {
            *big.entry(word).or_insert(0) += count;
        }
        let mut corpus_ids = self.corpus_ids;
        corpus_ids.extend(other.corpus_ids);
        FrequencyTable {
            counts: big,
            total_tokens: self.total_tokens + other.total_tokens,
            corpus_ids,
        }
    }

    pub fn relative_frequency(&self, word: &str) -> Result<f64> {
        if self.total_tokens == 0 {
            return Err(Error::EmptyTable);
        }
        Ok(self.count(word) as f64 / self.total_tokens as f64)
    }

    /// Writes `#total<TAB>N`, one `#corpus<TAB>id` line per corpus, then
    /// `token<TAB>count` rows in [`sorted`](Self::sorted) order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#total\t{}", self.total_tokens)?;
        for id in &self.corpus_ids {
            writeln!(out, "#corpus\t{id}")?;
        }
        for (word, count) in self.sorted() {
            writeln!(out, "{word}\t{count}")?;
        }
        out.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_tsv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(file), &path.display().to_string())
    }

    pub fn read_tsv<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut table = FrequencyTable::new();
        let mut declared_total = None;
        let mut sum = 0u64;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(source, lineno, e))?;
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, lineno, "expected two tab-separated fields"))?;
            match key {
                "#total" => {
                    let n = value
                        .parse()
                        .map_err(|e| Error::parse(source, lineno, format!("bad total: {e}")))?;
                    declared_total = Some(n);
                }
                "#corpus" => table.corpus_ids.push(value.to_owned()),
                word => {
                    let count: u64 = value
                        .parse()
                        .map_err(|e| Error::parse(source, lineno, format!("bad count: {e}")))?;
                    if !is_valid_token(word) {
                        return Err(Error::parse(source, lineno, format!("not a token: {word:?}")));
                    }
                    if table.counts.insert(word.to_owned(), count).is_some() {
                        return Err(Error::parse(source, lineno, format!("duplicate token {word:?}")));
                    }
                    sum += count;
                }
            }
        }
        let total = declared_total.ok_or_else(|| Error::parse(source, 1, "missing #total header"))?;
        if total != sum {
            return Err(Error::parse(
                source,
                1,
                format!("#total {total} does not match sum of counts {sum}"),
            ));
        }
        table.total_tokens = total;
        Ok(table)
    }
}

/// Opens `path` for line reading, transparently gunzipping when the file
/// starts with the gzip magic bytes.
pub fn open_text(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let mut got = 0;
    while got < 2 {
        let n = file.read(&mut magic[got..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        got += n;
    }
    let head = std::io::Cursor::new(magic[..got].to_vec());
    let stream = head.chain(file);
    if got == 2 && magic == GZIP_MAGIC {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(stream))))
    } else {
        Ok(Box::new(BufReader::new(stream)))
    }
}

fn count_batch(lines: &[Vec<u8>]) -> FrequencyTable {
    lines
        .par_chunks(1024)
        .map(|chunk| {
            let mut table = FrequencyTable::new();
            for raw in chunk {
                let line = String::from_utf8_lossy(raw);
                table.add_lines(std::iter::once(line.as_ref()));
            }
            table
        })
        .reduce(FrequencyTable::new, FrequencyTable::merge)
}

fn count_file(path: &Path) -> Result<FrequencyTable> {
    let mut reader = open_text(path)?;
    let mut table = FrequencyTable::new();
    loop {
        let mut batch = Vec::with_capacity(LINES_PER_BATCH);
        for _ in 0..LINES_PER_BATCH {
            let mut line = Vec::new();
            let n = reader
                .read_until(b'\n', &mut line)
                .map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            batch.push(line);
        }
        let done = batch.len() < LINES_PER_BATCH;
        table = table.merge(count_batch(&batch));
        if done {
            break;
        }
    }
    table.corpus_ids.push(path.display().to_string());
    Ok(table)
}

/// Counts every word of every file. Files are processed in parallel and
/// merged in input order, so `corpus_ids` follows `paths`.
pub fn build_table<P: AsRef<Path> + Sync>(paths: &[P]) -> Result<FrequencyTable> {
    if paths.is_empty() {
        return Err(Error::EmptyCorpusSet);
    }
    let tables = paths
        .par_iter()
        .map(|p| count_file(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(tables
        .into_iter()
        .fold(FrequencyTable::new(), FrequencyTable::merge))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(line: &str) -> Vec<String> {
        tokenize(line).into_iter().map(Token::into_string).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(words("Patient was afebrile."), ["patient", "was", "afebrile"]);
        assert_eq!(words("Covid-19 onset"), ["covid-19", "onset"]);
        assert!(words("").is_empty());
    }

    #[test]
    fn joiners_only_internal() {
        assert_eq!(words("-x- a--b 'tis o'clock"), ["x", "a", "b", "tis", "o'clock"]);
        assert_eq!(words("patient\u{2019}s"), ["patient's"]);
        assert_eq!(words("CHF/COPD"), ["chf", "copd"]);
        assert_eq!(words("état fébrile"), ["état", "fébrile"]);
    }

    #[test]
    fn token_validation() {
        assert!(Token::new("covid-19").is_ok());
        assert!(Token::new("Covid").is_err());
        assert!(Token::new("-x").is_err());
        assert!(Token::new("two words").is_err());
        assert!(Token::new("").is_err());
    }

    #[test]
    fn single_line_table() {
        let t = FrequencyTable::from_text("c", "the cat sat on the mat");
        assert_eq!(t.count("the"), 2);
        assert_eq!(t.count("cat"), 1);
        assert_eq!(t.total_tokens(), 6);
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn merge_identity_and_order() {
        let a = FrequencyTable::from_text("a", "x y y");
        let merged = a.clone().merge(FrequencyTable::new());
        assert_eq!(merged, a);
        let b = FrequencyTable::from_text("b", "y z");
        let ab = a.merge(b);
        assert_eq!(ab.count("y"), 3);
        assert_eq!(ab.total_tokens(), 5);
        assert_eq!(ab.corpus_ids(), ["a", "b"]);
    }

    #[test]
    fn relative_frequency_cases() {
        let t = FrequencyTable::from_counts([("afebrile", 100_000u64), ("filler", 3_999_900_000)], vec![])
            .unwrap();
        assert!((t.relative_frequency("afebrile").unwrap() - 0.000025).abs() < 1e-15);
        assert_eq!(t.relative_frequency("absent").unwrap(), 0.0);
        let single = FrequencyTable::from_text("s", "fever fever");
        assert_eq!(single.relative_frequency("fever").unwrap(), 1.0);
        assert!(matches!(
            FrequencyTable::new().relative_frequency("x"),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn tsv_layout() {
        let t = FrequencyTable::from_text("corpus.txt", "b a b c c c");
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "#total\t6\n#corpus\tcorpus.txt\nc\t3\nb\t2\na\t1\n"
        );
        let back = FrequencyTable::read_tsv(&buf[..], "mem").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn tsv_rejects_bad_total() {
        let err = FrequencyTable::read_tsv(&b"#total\t3\na\t1\n"[..], "mem").unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn build_table_errors() {
        let none: [&Path; 0] = [];
        assert!(matches!(build_table(&none), Err(Error::EmptyCorpusSet)));
        let err = build_table(&[Path::new("/nonexistent/corpus.txt")]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.txt"));
    }

    #[test]
    fn gzip_and_invalid_utf8() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("a.txt");
        std::fs::write(&plain, b"fever \xff\xfe chills\nfever\n").unwrap();
        let gz = dir.path().join("b.gz");
        let mut enc = GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::default());
        enc.write_all(b"fever\nrigors").unwrap();
        enc.finish().unwrap();
        let t = build_table(&[&plain, &gz]).unwrap();
        assert_eq!(t.count("fever"), 3);
        assert_eq!(t.count("chills"), 1);
        assert_eq!(t.count("rigors"), 1);
        assert_eq!(t.total_tokens(), 5);
        assert_eq!(t.corpus_ids().len(), 2);
        assert!(t.corpus_ids()[1].ends_with("b.gz"));
    }
}
