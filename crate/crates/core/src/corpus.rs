//! Corpus ingestion, sentence segmentation and length filtering.
//!
//! A [`CorpusStore`] holds every ingested [`Document`] together with the
//! sentence table derived from it. The on-disk layout is append-only:
//!
//! ```text
//! <dir>/corpus.toml       discipline registry, year window, filter thresholds
//! <dir>/documents.jsonl   one ingestion record per document
//! <dir>/sentences.jsonl   one SentenceRecord per surviving sentence
//! ```
//!
//! Sentence filtering is applied at ingestion time, so the sentence table
//! never changes for a document once it has been written.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MIN_DOC_CHARS: usize = 1000;
pub const DEFAULT_MIN_SENTENCE_WORDS: usize = 45;

pub const CONFIG_FILE: &str = "corpus.toml";
pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const SENTENCES_FILE: &str = "sentences.jsonl";

/// Discipline labels known to every corpus without further declaration.
pub const DEFAULT_DISCIPLINES: &[&str] = &[
    "chemistry",
    "general",
    "geography",
    "geology",
    "medical",
    "natural_history",
    "orientalist",
    "political_social",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("invalid metadata for {doc_id:?}: {reason}")]
    InvalidMetadata { doc_id: String, reason: String },
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub title: String,
    pub author: String,
    pub pub_year: i32,
    #[serde(default)]
    pub disciplines: BTreeSet<String>,
    #[serde(default)]
    pub is_correspondent: bool,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub meta: DocumentMeta,
    pub raw_text: String,
}

impl Document {
    /// Length of the raw text in characters (not bytes).
    pub fn char_len(&self) -> usize {
        self.raw_text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sentence_id: String,
    pub doc_id: String,
    /// Dense position among the document's surviving sentences.
    pub ordinal: usize,
    /// Position in the unfiltered segmentation of the document.
    pub segment_ordinal: usize,
    pub text: String,
    pub word_count: usize,
}

/// Builds the stable identifier for the `ordinal`-th sentence of `doc_id`.
pub fn sentence_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal}")
}

/// Inverse of [`sentence_id`].
pub fn parse_sentence_id(id: &str) -> Option<(&str, usize)> {
    let (doc, ord) = id.rsplit_once('#')?;
    if ord.is_empty() || (ord.len() > 1 && ord.starts_with('0')) {
        return None;
    }
    Some((doc, ord.parse().ok()?))
}

/// One line of the JSON-lines ingestion format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub doc_id: String,
    pub title: String,
    pub author: String,
    pub pub_year: i32,
    #[serde(default)]
    pub disciplines: Vec<String>,
    #[serde(default)]
    pub is_correspondent: bool,
    #[serde(default)]
    pub source: String,
    pub text: String,
}

impl IngestRecord {
    pub fn into_parts(self) -> (DocumentMeta, String) {
        let meta = DocumentMeta {
            doc_id: self.doc_id,
            title: self.title,
            author: self.author,
            pub_year: self.pub_year,
            disciplines: self.disciplines.into_iter().collect(),
            is_correspondent: self.is_correspondent,
            source: self.source,
        };
        (meta, self.text)
    }

    pub fn from_document(doc: &Document) -> Self {
        Self {
            doc_id: doc.meta.doc_id.clone(),
            title: doc.meta.title.clone(),
            author: doc.meta.author.clone(),
            pub_year: doc.meta.pub_year,
            disciplines: doc.meta.disciplines.iter().cloned().collect(),
            is_correspondent: doc.meta.is_correspondent,
            source: doc.meta.source.clone(),
            text: doc.raw_text.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_doc_chars: usize,
    pub min_sentence_words: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_doc_chars: DEFAULT_MIN_DOC_CHARS,
            min_sentence_words: DEFAULT_MIN_SENTENCE_WORDS,
        }
    }
}

impl FilterConfig {
    /// Keeps every segmented sentence of every document.
    pub fn disabled() -> Self {
        Self { min_doc_chars: 0, min_sentence_words: 0 }
    }
}

/// Contents of `corpus.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Additional discipline labels beyond [`DEFAULT_DISCIPLINES`].
    pub disciplines: Vec<String>,
    pub min_pub_year: i32,
    pub max_pub_year: i32,
    pub filter: FilterConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            disciplines: Vec::new(),
            min_pub_year: 1500,
            max_pub_year: 1950,
            filter: FilterConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| CorpusError::Config(e.to_string()))?;
        if cfg.min_pub_year > cfg.max_pub_year {
            return Err(CorpusError::Config(format!(
                "min_pub_year {} exceeds max_pub_year {}",
                cfg.min_pub_year, cfg.max_pub_year
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("corpus config serializes")
    }

    /// The full discipline registry: defaults plus declared labels.
    pub fn registry(&self) -> BTreeSet<String> {
        DEFAULT_DISCIPLINES
            .iter()
            .map(|s| s.to_string())
            .chain(self.disciplines.iter().cloned())
            .collect()
    }

    pub fn validate_meta(&self, meta: &DocumentMeta) -> Result<()> {
        let invalid = |reason: String| CorpusError::InvalidMetadata {
            doc_id: meta.doc_id.clone(),
            reason,
        };
        if meta.doc_id.trim().is_empty() {
            return Err(invalid("empty doc_id".into()));
        }
        if meta.doc_id.contains('#') {
            return Err(invalid("doc_id may not contain '#'".into()));
        }
        if meta.pub_year < self.min_pub_year || meta.pub_year > self.max_pub_year {
            return Err(invalid(format!(
                "pub_year {} outside {}..={}",
                meta.pub_year, self.min_pub_year, self.max_pub_year
            )));
        }
        let registry = self.registry();
        if let Some(label) = meta.disciplines.iter().find(|d| !registry.contains(*d)) {
            return Err(invalid(format!("unknown discipline {label:?}")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Segmentation

/// Lower-cased tokens (with their final period) that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "messrs.", "dr.", "st.", "mt.", "prof.", "rev.", "hon.", "esq.", "sir.",
    "capt.", "col.", "gen.", "lieut.", "lt.", "maj.", "sgt.", "adm.", "gov.", "jun.", "sen.",
    "jr.", "sr.", "co.", "bros.", "vol.", "vols.", "fig.", "figs.", "pl.", "ch.", "chap.",
    "p.", "pp.", "no.", "nos.", "ed.", "eds.", "trans.", "etc.", "viz.", "cf.", "ibid.",
    "id.", "op.", "cit.", "loc.", "al.", "vs.", "sp.", "spp.", "var.", "ms.", "mss.", "ft.",
    "lb.", "lbs.", "oz.", "cwt.", "yds.", "jan.", "feb.", "mar.", "apr.", "aug.", "sept.",
    "oct.", "nov.", "dec.", "proc.", "soc.", "phil.", "journ.", "mag.", "geol.", "zool.",
    "bot.", "nat.", "hist.",
];

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Whether the whitespace-delimited token ending in a period is an
/// abbreviation or initial rather than a sentence end.
fn is_abbreviation(token: &str) -> bool {
    let token = token.trim_start_matches(is_opening);
    let lower = token.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    let letters: Vec<char> = token.chars().collect();
    // Single initial: "C."
    if letters.len() == 2 && letters[0].is_uppercase() {
        return true;
    }
    // Dotted forms: "i.e.", "e.g.", "U.S.", "N.B."
    letters.len() >= 4
        && letters.chunks(2).all(|pair| pair.len() == 2 && pair[0].is_alphabetic() && pair[1] == '.')
}

/// Byte ranges of each sentence in `text`, trimmed of surrounding whitespace.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        // Run of terminals and closing punctuation: "?!", "...", ".'"
        let mut j = i + 1;
        while j < chars.len() && (is_terminal(chars[j].1) || is_closing(chars[j].1)) {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k == j || k == chars.len() {
            i = j;
            continue;
        }
        let mut m = k;
        while m < chars.len() && is_opening(chars[m].1) {
            m += 1;
        }
        let starts_upper = m < chars.len() && chars[m].1.is_uppercase();
        if !starts_upper {
            i = j;
            continue;
        }
        if c == '.' && j == i + 1 {
            let token_start = text[..pos]
                .rfind(char::is_whitespace)
                .map(|p| p + text[p..].chars().next().unwrap().len_utf8())
                .unwrap_or(0);
            if is_abbreviation(&text[token_start..pos + 1]) {
                i = j;
                continue;
            }
        }
        let end = if j < chars.len() { chars[j].0 } else { text.len() };
        push_trimmed(text, start, end, &mut spans);
        start = chars[k].0;
        i = k;
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}

/// Splits `raw_text` into sentences at `.`, `!` or `?` followed by whitespace
/// and an upper-case letter, skipping known abbreviations and initials.
pub fn segment_sentences(raw_text: &str) -> Vec<String> {
    sentence_spans(raw_text)
        .into_iter()
        .map(|(s, e)| raw_text[s..e].to_string())
        .collect()
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Segments one document and applies the length filters.
pub fn filter_document(doc: &Document, config: &FilterConfig) -> Vec<SentenceRecord> {
    if doc.char_len() < config.min_doc_chars {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (segment_ordinal, sentence) in segment_sentences(&doc.raw_text).iter().enumerate() {
        let text = normalize_whitespace(sentence);
        let words = word_count(&text);
        if words < config.min_sentence_words {
            continue;
        }
        let ordinal = out.len();
        out.push(SentenceRecord {
            sentence_id: sentence_id(&doc.meta.doc_id, ordinal),
            doc_id: doc.meta.doc_id.clone(),
            ordinal,
            segment_ordinal,
            text,
            word_count: words,
        });
    }
    out
}

pub fn filter_corpus<'a, I>(documents: I, config: &FilterConfig) -> Vec<SentenceRecord>
where
    I: IntoIterator<Item = &'a Document>,
{
    documents
        .into_iter()
        .flat_map(|doc| filter_document(doc, config))
        .collect()
}

// ---------------------------------------------------------------------------
// Store

#[derive(Debug, Default)]
pub struct CorpusStore {
    config: CorpusConfig,
    documents: Vec<Document>,
    doc_index: HashMap<String, usize>,
    sentences: Vec<SentenceRecord>,
    sentence_index: HashMap<String, usize>,
    /// Range into `sentences` for each document, by document position.
    doc_sentences: Vec<(usize, usize)>,
    dir: Option<PathBuf>,
}

impl CorpusStore {
    /// An in-memory store that is never written to disk.
    pub fn in_memory(config: CorpusConfig) -> Self {
        Self { config, ..Default::default() }
    }

    /// Creates a new on-disk store. Fails if `dir` already holds a corpus.
    pub fn create(dir: impl AsRef<Path>, config: CorpusConfig) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let cfg_path = dir.join(CONFIG_FILE);
        if cfg_path.exists() {
            return Err(CorpusError::Config(format!("{} already exists", cfg_path.display())));
        }
        fs::write(&cfg_path, config.to_toml())?;
        File::create(dir.join(DOCUMENTS_FILE))?;
        File::create(dir.join(SENTENCES_FILE))?;
        Ok(Self {
            config,
            dir: Some(dir.to_path_buf()),
            ..Default::default()
        })
    }

    /// Opens an existing on-disk store, or creates one with `config` if the
    /// directory holds none.
    pub fn open_or_create(dir: impl AsRef<Path>, config: CorpusConfig) -> Result<Self> {
        if dir.as_ref().join(CONFIG_FILE).exists() {
            Self::open(dir)
        } else {
            Self::create(dir, config)
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config = CorpusConfig::from_toml(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let mut store = Self::in_memory(config);
        let docs = read_jsonl::<IngestRecord>(&dir.join(DOCUMENTS_FILE))?;
        let sentences = read_jsonl::<SentenceRecord>(&dir.join(SENTENCES_FILE))?;
        for rec in docs {
            let (meta, text) = rec.into_parts();
            store.insert_document(Document { meta, raw_text: text }, Vec::new())?;
        }
        // Reattach the persisted sentence table rather than re-segmenting, so a
        // store keeps its ids even if the segmenter changes.
        let mut ranges = vec![(0usize, 0usize); store.documents.len()];
        let mut last_doc: Option<usize> = None;
        for (i, s) in sentences.into_iter().enumerate() {
            let d = *store
                .doc_index
                .get(&s.doc_id)
                .ok_or_else(|| CorpusError::UnknownDocument(s.doc_id.clone()))?;
            if last_doc != Some(d) {
                ranges[d].0 = i;
                last_doc = Some(d);
            }
            ranges[d].1 = i + 1;
            store.sentence_index.insert(s.sentence_id.clone(), i);
            store.sentences.push(s);
        }
        for (d, r) in ranges.into_iter().enumerate() {
            store.doc_sentences[d] = if r.1 > r.0 { r } else { (0, 0) };
        }
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Validates, stores and segments one document.
    pub fn ingest_document(&mut self, meta: DocumentMeta, raw_text: String) -> Result<&Document> {
        if self.doc_index.contains_key(&meta.doc_id) {
            return Err(CorpusError::DuplicateDocId(meta.doc_id));
        }
        self.config.validate_meta(&meta)?;
        let doc = Document { meta, raw_text };
        let records = filter_document(&doc, &self.config.filter);
        if let Some(dir) = &self.dir {
            append_jsonl(&dir.join(DOCUMENTS_FILE), std::iter::once(&IngestRecord::from_document(&doc)))?;
            append_jsonl(&dir.join(SENTENCES_FILE), records.iter())?;
        }
        let pos = self.insert_document(doc, records)?;
        Ok(&self.documents[pos])
    }

    fn insert_document(&mut self, doc: Document, records: Vec<SentenceRecord>) -> Result<usize> {
        if self.doc_index.contains_key(&doc.meta.doc_id) {
            return Err(CorpusError::DuplicateDocId(doc.meta.doc_id));
        }
        let pos = self.documents.len();
        self.doc_index.insert(doc.meta.doc_id.clone(), pos);
        self.documents.push(doc);
        let start = self.sentences.len();
        for r in records {
            self.sentence_index.insert(r.sentence_id.clone(), self.sentences.len());
            self.sentences.push(r);
        }
        let end = self.sentences.len();
        self.doc_sentences.push(if end > start { (start, end) } else { (0, 0) });
        Ok(pos)
    }

    /// Ingests every line of a JSON-lines corpus file. Blank lines are skipped.
    pub fn ingest_jsonl<R: BufRead>(&mut self, reader: R) -> Result<usize> {
        let mut count = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IngestRecord = serde_json::from_str(&line)
                .map_err(|source| CorpusError::Parse { line: i + 1, source })?;
            let (meta, text) = rec.into_parts();
            self.ingest_document(meta, text)?;
            count += 1;
        }
        Ok(count)
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.doc_index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn sentence(&self, sentence_id: &str) -> Option<&SentenceRecord> {
        self.sentence_index.get(sentence_id).map(|&i| &self.sentences[i])
    }

    /// Surviving sentences of one document, in ordinal order.
    pub fn document_sentences(&self, doc_id: &str) -> Option<&[SentenceRecord]> {
        let &pos = self.doc_index.get(doc_id)?;
        let (s, e) = self.doc_sentences[pos];
        Some(&self.sentences[s..e])
    }

    pub fn metas(&self) -> impl Iterator<Item = &DocumentMeta> {
        self.documents.iter().map(|d| &d.meta)
    }

    /// SHA-256 over the sentence table (ids and texts, in order), hex encoded.
    pub fn corpus_hash(&self) -> String {
        hash_sentences(&self.sentences)
    }
}

pub fn hash_sentences(sentences: &[SentenceRecord]) -> String {
    let mut h = Sha256::new();
    for s in sentences {
        h.update(s.sentence_id.as_bytes());
        h.update([0u8]);
        h.update(s.text.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

fn append_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> Result<()> {
    let file = OpenOptions::new().append(true).create(true).open(path)?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CorpusError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
