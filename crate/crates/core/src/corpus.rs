//! Parallel and monolingual corpus model, file formats and statistics.
//!
//! Three on-disk formats are supported:
//!
//! * `tsv`: one pair per line, `source<TAB>target`. Literal tab, newline,
//!   carriage return and backslash characters inside a cell are written as
//!   `\t`, `\n`, `\r` and `\\` and unescaped on load. A monolingual corpus
//!   is written one source per line with no tab.
//! * `moses_pair`: two line-aligned files `<prefix>.<src_lang>` and
//!   `<prefix>.<tgt_lang>`, the layout OPUS distributes. A monolingual corpus
//!   only has the source-side file.
//! * `jsonl`: one object per line with keys `source`, `target`, `src_lang`,
//!   `tgt_lang`, `origin`, `domain`, `provenance`. Missing keys fall back to
//!   the load options.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::ops::Add;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "sided files are not aligned: {} has {source_lines} lines, {} has {target_lines} lines",
        source_path.display(),
        target_path.display()
    )]
    Alignment {
        source_path: PathBuf,
        source_lines: usize,
        target_path: PathBuf,
        target_lines: usize,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cannot write {} as {format}: {reason}", path.display())]
    Unrepresentable {
        path: PathBuf,
        format: Format,
        reason: String,
    },
    #[error("unknown corpus format `{0}` (expected tsv, moses_pair or jsonl)")]
    UnknownFormat(String),
    #[error("invalid segment pair: {0}")]
    InvalidPair(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Where the target side of a pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Authentic,
    Pivot,
    Backtranslated,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Authentic => "authentic",
            Provenance::Pivot => "pivot",
            Provenance::Backtranslated => "backtranslated",
        })
    }
}

/// One source/target segment with its language tags and provenance.
///
/// Monolingual records have an empty `target` and no `tgt_lang`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentPair {
    pub source: String,
    pub target: String,
    pub src_lang: String,
    pub tgt_lang: Option<String>,
    pub origin: String,
    pub domain: String,
    pub provenance: Provenance,
}

impl SegmentPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>, meta: &LoadOptions) -> Self {
        SegmentPair {
            source: source.into(),
            target: target.into(),
            src_lang: meta.src_lang.clone(),
            tgt_lang: meta.tgt_lang.clone(),
            origin: meta.origin.clone(),
            domain: meta.domain.clone(),
            provenance: Provenance::Authentic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_lang.is_empty() {
            return Err(CorpusError::InvalidPair("src_lang is empty".into()));
        }
        if self.provenance != Provenance::Authentic && self.origin.is_empty() {
            return Err(CorpusError::InvalidPair(format!(
                "{} pair without a generating backend in origin",
                self.provenance
            )));
        }
        Ok(())
    }

    pub fn is_monolingual(&self) -> bool {
        self.tgt_lang.is_none()
    }

    /// Swap source and target sides, for training the reverse direction.
    pub fn reversed(&self) -> SegmentPair {
        SegmentPair {
            source: self.target.clone(),
            target: self.source.clone(),
            src_lang: self.tgt_lang.clone().unwrap_or_default(),
            tgt_lang: Some(self.src_lang.clone()),
            origin: self.origin.clone(),
            domain: self.domain.clone(),
            provenance: self.provenance,
        }
    }
}

/// An ordered, identified list of segment pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Corpus {
    pub id: String,
    pub pairs: Vec<SegmentPair>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new(id: impl Into<String>, pairs: Vec<SegmentPair>) -> Self {
        Corpus {
            id: id.into(),
            pairs,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Concatenate `other` after `self`, keeping `self`'s id and metadata.
    pub fn concat(mut self, other: &Corpus) -> Corpus {
        self.pairs.extend(other.pairs.iter().cloned());
        self
    }

    /// SHA-256 over the pairs in order, hex encoded. Metadata is not hashed.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for pair in &self.pairs {
            // serialization of plain strings and enums cannot fail
            let line = serde_json::to_vec(pair).expect("pair serializes");
            hasher.update(&line);
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CorpusStats {
    pub n_sentences: usize,
    pub n_tokens_source: usize,
    pub n_tokens_target: usize,
    pub n_tokens_total: usize,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, rhs: CorpusStats) -> CorpusStats {
        CorpusStats {
            n_sentences: self.n_sentences + rhs.n_sentences,
            n_tokens_source: self.n_tokens_source + rhs.n_tokens_source,
            n_tokens_target: self.n_tokens_target + rhs.n_tokens_target,
            n_tokens_total: self.n_tokens_total + rhs.n_tokens_total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Tsv,
    MosesPair,
    Jsonl,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Tsv => "tsv",
            Format::MosesPair => "moses_pair",
            Format::Jsonl => "jsonl",
        })
    }
}

impl FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "moses_pair" | "moses" => Ok(Format::MosesPair),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Attributes stamped on every pair read from a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub src_lang: String,
    pub tgt_lang: Option<String>,
    pub origin: String,
    #[serde(default = "default_domain")]
    pub domain: String,
}

fn default_domain() -> String {
    "general".to_string()
}

impl LoadOptions {
    pub fn new(src_lang: &str, tgt_lang: Option<&str>, origin: &str, domain: &str) -> Self {
        LoadOptions {
            src_lang: src_lang.to_lowercase(),
            tgt_lang: tgt_lang.map(str::to_lowercase),
            origin: origin.to_string(),
            domain: domain.to_string(),
        }
    }
}

/// Path of one side of a `moses_pair` corpus.
pub fn moses_side_path(prefix: &Path, lang: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(".");
    name.push(lang);
    PathBuf::from(name)
}

fn read_text(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(match text.strip_prefix('\u{feff}') {
        Some(rest) => rest.to_string(),
        None => text,
    })
}

// A trailing newline terminates the last line rather than starting a new one.
fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect()
}

/// Read a corpus file. No normalization is applied beyond line splitting
/// and byte-order-mark removal.
pub fn load_corpus(path: &Path, format: Format, opts: &LoadOptions) -> Result<Corpus> {
    if opts.src_lang.is_empty() {
        return Err(CorpusError::InvalidPair("src_lang is empty".into()));
    }
    let pairs = match format {
        Format::Tsv => load_tsv(path, opts)?,
        Format::MosesPair => load_moses(path, opts)?,
        Format::Jsonl => load_jsonl(path, opts)?,
    };
    Ok(Corpus::new(opts.origin.clone(), pairs))
}

fn load_tsv(path: &Path, opts: &LoadOptions) -> Result<Vec<SegmentPair>> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (idx, line) in split_lines(&text).into_iter().enumerate() {
        let malformed = |reason: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let cells: Vec<&str> = line.split('\t').collect();
        let (source, target) = match (cells.as_slice(), &opts.tgt_lang) {
            ([src, tgt], Some(_)) => (*src, *tgt),
            ([src], None) => (*src, ""),
            (_, Some(_)) => {
                return Err(malformed(format!("expected 2 tab-separated cells, found {}", cells.len())))
            }
            (_, None) => {
                return Err(malformed(format!(
                    "expected 1 cell for a monolingual corpus, found {}",
                    cells.len()
                )))
            }
        };
        let source = unescape_tsv(source).map_err(&malformed)?;
        let target = unescape_tsv(target).map_err(&malformed)?;
        pairs.push(SegmentPair::new(source, target, opts));
    }
    Ok(pairs)
}

fn load_moses(prefix: &Path, opts: &LoadOptions) -> Result<Vec<SegmentPair>> {
    let src_path = moses_side_path(prefix, &opts.src_lang);
    let src_text = read_text(&src_path)?;
    let src_lines = split_lines(&src_text);
    let Some(tgt_lang) = &opts.tgt_lang else {
        return Ok(src_lines.into_iter().map(|s| SegmentPair::new(s, "", opts)).collect());
    };
    let tgt_path = moses_side_path(prefix, tgt_lang);
    let tgt_text = read_text(&tgt_path)?;
    let tgt_lines = split_lines(&tgt_text);
    if src_lines.len() != tgt_lines.len() {
        return Err(CorpusError::Alignment {
            source_path: src_path,
            source_lines: src_lines.len(),
            target_path: tgt_path,
            target_lines: tgt_lines.len(),
        });
    }
    Ok(src_lines
        .into_iter()
        .zip(tgt_lines)
        .map(|(s, t)| SegmentPair::new(s, t, opts))
        .collect())
}

#[derive(Deserialize)]
struct JsonRecord {
    source: String,
    #[serde(default)]
    target: Option<String>,
    src_lang: Option<String>,
    #[serde(default, deserialize_with = "double_option")]
    tgt_lang: Option<Option<String>>,
    origin: Option<String>,
    domain: Option<String>,
    provenance: Option<Provenance>,
}

// distinguishes an explicit `"tgt_lang": null` from a missing key
fn double_option<'de, D>(de: D) -> std::result::Result<Option<Option<String>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Option::<String>::deserialize(de).map(Some)
}

fn load_jsonl(path: &Path, opts: &LoadOptions) -> Result<Vec<SegmentPair>> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (idx, line) in split_lines(&text).into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let pair = SegmentPair {
            source: rec.source,
            target: rec.target.unwrap_or_default(),
            src_lang: rec.src_lang.unwrap_or_else(|| opts.src_lang.clone()),
            tgt_lang: rec.tgt_lang.unwrap_or_else(|| opts.tgt_lang.clone()),
            origin: rec.origin.unwrap_or_else(|| opts.origin.clone()),
            domain: rec.domain.unwrap_or_else(|| opts.domain.clone()),
            provenance: rec.provenance.unwrap_or_default(),
        };
        pair.validate().map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn escape_tsv(cell: &str) -> String {
    let mut out = String::with_capacity(cell.len());
    for c in cell.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_tsv(cell: &str) -> std::result::Result<String, String> {
    if !cell.contains('\\') {
        return Ok(cell.to_string());
    }
    let mut out = String::with_capacity(cell.len());
    let mut chars = cell.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape sequence `\\{other}`")),
            None => return Err("dangling backslash at end of cell".to_string()),
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Write a corpus. For `moses_pair`, `path` is the file prefix and the
/// language codes of the first pair name the two sides.
pub fn save_corpus(corpus: &Corpus, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Tsv => {
            let mono = corpus.pairs.iter().all(SegmentPair::is_monolingual) && !corpus.is_empty();
            let lines = corpus.pairs.iter().map(|p| {
                if mono {
                    escape_tsv(&p.source)
                } else {
                    format!("{}\t{}", escape_tsv(&p.source), escape_tsv(&p.target))
                }
            });
            write_lines(path, lines)
        }
        Format::Jsonl => {
            let lines = corpus
                .pairs
                .iter()
                .map(|p| serde_json::to_string(p).expect("pair serializes"));
            write_lines(path, lines)
        }
        Format::MosesPair => save_moses(corpus, path),
    }
}

fn save_moses(corpus: &Corpus, prefix: &Path) -> Result<()> {
    let Some(first) = corpus.pairs.first() else {
        return Err(CorpusError::Unrepresentable {
            path: prefix.to_path_buf(),
            format: Format::MosesPair,
            reason: "empty corpus has no language codes to name the sided files".into(),
        });
    };
    for (i, p) in corpus.pairs.iter().enumerate() {
        if [&p.source, &p.target].iter().any(|s| s.contains('\n') || s.contains('\r')) {
            return Err(CorpusError::Unrepresentable {
                path: prefix.to_path_buf(),
                format: Format::MosesPair,
                reason: format!("pair {} contains a line break", i + 1),
            });
        }
        if p.src_lang != first.src_lang || p.tgt_lang != first.tgt_lang {
            return Err(CorpusError::Unrepresentable {
                path: prefix.to_path_buf(),
                format: Format::MosesPair,
                reason: format!("pair {} has a different language pair than pair 1", i + 1),
            });
        }
    }
    write_lines(
        &moses_side_path(prefix, &first.src_lang),
        corpus.pairs.iter().map(|p| p.source.clone()),
    )?;
    if let Some(tgt) = &first.tgt_lang {
        write_lines(
            &moses_side_path(prefix, tgt),
            corpus.pairs.iter().map(|p| p.target.clone()),
        )?;
    }
    Ok(())
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    for line in lines {
        w.write_all(line.as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// NFC-compose, trim, and collapse internal whitespace runs to one space.
pub fn normalize_text(text: &str) -> String {
    let composed: String = text.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn normalize(pair: &SegmentPair) -> SegmentPair {
    SegmentPair {
        source: normalize_text(&pair.source),
        target: normalize_text(&pair.target),
        ..pair.clone()
    }
}

/// Whitespace token count of the normalized text.
pub fn count_tokens(text: &str) -> usize {
    normalize_text(text).split_whitespace().count()
}

pub fn stats(corpus: &Corpus) -> CorpusStats {
    corpus
        .pairs
        .iter()
        .map(|p| {
            let src = count_tokens(&p.source);
            let tgt = count_tokens(&p.target);
            CorpusStats {
                n_sentences: 1,
                n_tokens_source: src,
                n_tokens_target: tgt,
                n_tokens_total: src + tgt,
            }
        })
        .fold(CorpusStats::default(), Add::add)
}
