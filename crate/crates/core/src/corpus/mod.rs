//! Multi-label corpus ingestion: JSONL records, tweet normalization,
//! vocabulary, label space and label co-occurrence counts.

mod text;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use text::{preprocess, tokenize, NUM, PAD, RESERVED, UNK, URL, USER};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: malformed record: {message}")]
    Json { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: unknown label {label:?}")]
    UnknownLabel { path: PathBuf, line: usize, label: String },
    #[error("{path}:{line}: text is empty after preprocessing")]
    EmptyText { path: PathBuf, line: usize },
    #[error("no examples")]
    NoExamples,
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("a label space needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("unknown label {0:?}")]
    Unknown(String),
    #[error("invalid co-occurrence matrix: {0}")]
    InvalidCounts(String),
    #[error("vocabulary must start with the reserved tokens {RESERVED:?}")]
    BadVocabulary,
}

/// Ordered emotion names; the order fixes the axis of every label-indexed
/// vector and matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(CorpusError::DuplicateLabel(name.clone()));
            }
        }
        if names.len() < 2 {
            return Err(CorpusError::TooFewLabels(names.len()));
        }
        Ok(Self { names, index })
    }

    /// One label per non-blank line.
    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = read(path)?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Position of `name`, looking it up through `aliases` first.
    pub fn resolve(&self, name: &str, aliases: &BTreeMap<String, String>) -> Option<usize> {
        let target = aliases.get(name).map_or(name, String::as_str);
        self.position(target)
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = CorpusError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(names)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(ls: LabelSpace) -> Self {
        ls.names
    }
}

/// Token ids 0..5 are always `<pad> <unk> <url> <user> <num>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = CorpusError;

    fn try_from(file: VocabFile) -> Result<Self, Self::Error> {
        Self::from_tokens(file.tokens)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocabulary {
    pub const UNK_ID: usize = 1;

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(CorpusError::BadVocabulary);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::BadVocabulary);
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keeps tokens seen at least `min_freq` times, most frequent first with
    /// ties broken lexicographically.
    pub fn build<'a>(token_lists: impl IntoIterator<Item = &'a [String]>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for list in token_lists {
            for t in list {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .copied()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(String::from)
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix is always present")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }
}

/// One JSONL line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub raw_text: String,
    pub tokens: Vec<usize>,
    pub labels: Vec<bool>,
}

impl Example {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &y)| y).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusOptions {
    pub min_freq: usize,
    pub max_len: usize,
    /// Record label name to label-space name, applied before lookup.
    pub aliases: BTreeMap<String, String>,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self { min_freq: 2, max_len: 64, aliases: BTreeMap::new() }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub labels: LabelSpace,
    pub vocab: Vocabulary,
}

/// A record list paired with the file lines it came from.
#[derive(Debug, Clone)]
pub struct RecordFile {
    pub path: PathBuf,
    pub records: Vec<(usize, Record)>,
}

impl RecordFile {
    /// Records not backed by a file; line numbers count from 1.
    pub fn in_memory(records: Vec<Record>) -> Self {
        Self { path: PathBuf::from("<memory>"), records: records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect() }
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

/// Parses a JSONL corpus; blank lines are skipped, line numbers are 1-based.
pub fn read_records(path: &Path) -> Result<RecordFile, CorpusError> {
    let text = read(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| CorpusError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push((i + 1, record));
    }
    if records.is_empty() {
        return Err(CorpusError::NoExamples);
    }
    Ok(RecordFile { path: path.to_path_buf(), records })
}

/// Labels in order of first appearance (after alias mapping).
pub fn label_space_from_records(
    files: &[&RecordFile],
    aliases: &BTreeMap<String, String>,
) -> Result<LabelSpace, CorpusError> {
    let mut names: Vec<String> = Vec::new();
    for file in files {
        for (_, r) in &file.records {
            for l in &r.labels {
                let l = aliases.get(l).unwrap_or(l);
                if !names.contains(l) {
                    names.push(l.clone());
                }
            }
        }
    }
    LabelSpace::new(names)
}

pub fn tokenize_records(file: &RecordFile) -> Vec<Vec<String>> {
    file.records.iter().map(|(_, r)| tokenize(&preprocess(&r.text))).collect()
}

/// Turns records into examples against a fixed vocabulary and label space.
pub fn encode_records(
    file: &RecordFile,
    labels: &LabelSpace,
    vocab: &Vocabulary,
    options: &CorpusOptions,
) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::with_capacity(file.records.len());
    for (line, record) in &file.records {
        let toks = tokenize(&preprocess(&record.text));
        if toks.is_empty() {
            return Err(CorpusError::EmptyText { path: file.path.clone(), line: *line });
        }
        let mut y = vec![false; labels.len()];
        for l in &record.labels {
            let i = labels.resolve(l, &options.aliases).ok_or_else(|| CorpusError::UnknownLabel {
                path: file.path.clone(),
                line: *line,
                label: l.clone(),
            })?;
            y[i] = true;
        }
        out.push(Example {
            raw_text: record.text.clone(),
            tokens: vocab.encode(&toks, options.max_len),
            labels: y,
        });
    }
    Ok(out)
}

/// Loads a training corpus, building its vocabulary (and label space unless
/// one is given) from this file only.
pub fn load_corpus(
    path: &Path,
    label_space: Option<&LabelSpace>,
    options: &CorpusOptions,
) -> Result<Corpus, CorpusError> {
    build_corpus(&read_records(path)?, label_space, options)
}

/// [`load_corpus`] on records that are already in memory.
pub fn build_corpus(
    file: &RecordFile,
    label_space: Option<&LabelSpace>,
    options: &CorpusOptions,
) -> Result<Corpus, CorpusError> {
    if file.records.is_empty() {
        return Err(CorpusError::NoExamples);
    }
    let labels = match label_space {
        Some(ls) => ls.clone(),
        None => label_space_from_records(&[file], &options.aliases)?,
    };
    let token_lists = tokenize_records(file);
    let vocab = Vocabulary::build(token_lists.iter().map(Vec::as_slice), options.min_freq);
    let examples = encode_records(file, &labels, &vocab, options)?;
    Ok(Corpus { examples, labels, vocab })
}

/// Loads a held-out split against an existing vocabulary and label space.
pub fn load_split(
    path: &Path,
    labels: &LabelSpace,
    vocab: &Vocabulary,
    options: &CorpusOptions,
) -> Result<Vec<Example>, CorpusError> {
    encode_records(&read_records(path)?, labels, vocab, options)
}

/// Symmetric `n × n` label co-occurrence counts; the diagonal holds the
/// per-label positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl CooccurrenceMatrix {
    /// Validates symmetry and that no pair count exceeds either class count.
    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self, CorpusError> {
        if counts.len() != n * n {
            return Err(CorpusError::InvalidCounts(format!("{} entries for n = {n}", counts.len())));
        }
        for i in 0..n {
            for j in 0..n {
                let v = counts[i * n + j];
                if v != counts[j * n + i] {
                    return Err(CorpusError::InvalidCounts(format!("not symmetric at ({i}, {j})")));
                }
                if v > counts[i * n + i] {
                    return Err(CorpusError::InvalidCounts(format!(
                        "pair ({i}, {j}) exceeds class count {}",
                        counts[i * n + i]
                    )));
                }
            }
        }
        Ok(Self { n, counts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }
}

/// Counts, for every label pair, the examples in which both are positive.
///
/// # Panics
/// If a label vector does not have length `n`.
pub fn count_cooccurrence<'a>(label_sets: impl IntoIterator<Item = &'a [bool]>, n: usize) -> CooccurrenceMatrix {
    let mut counts = vec![0u64; n * n];
    let mut on = Vec::with_capacity(n);
    for y in label_sets {
        assert_eq!(y.len(), n, "label vector width {} != {n}", y.len());
        on.clear();
        on.extend(y.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i));
        for &i in &on {
            for &j in &on {
                counts[i * n + j] += 1;
            }
        }
    }
    CooccurrenceMatrix { n, counts }
}

pub fn count_examples(examples: &[Example], n: usize) -> CooccurrenceMatrix {
    count_cooccurrence(examples.iter().map(|e| e.labels.as_slice()), n)
}
