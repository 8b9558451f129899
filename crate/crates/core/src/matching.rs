//! Focus-book query pipeline and confidence tiers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{filter_document, parse_sentence_id, CorpusStore, Document, SentenceRecord};
use crate::embed::{embed_batch, embed_text, EmbedError, EmbeddingProvider, EmbeddingProviderConfig};
use crate::vindex::{Manifest, SearchHit, VectorIndex, VindexError};

pub const DEFAULT_FLOOR: f32 = 0.85;
pub const DEFAULT_MAX_HITS_PER_SENTENCE: usize = 1000;
pub const DEFAULT_MIN_MATCHING_SENTENCES: usize = 6;
pub const MATCH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("manifest mismatch on {field}: index has {index:?}, current value is {current:?}")]
    ManifestMismatch { field: &'static str, index: String, current: String },
    #[error("focus book {0:?} has no sentences left after filtering")]
    EmptyFocusBook(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("unknown sentence {0:?}")]
    UnknownSentence(String),
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("malformed match export: {0}")]
    Format(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] VindexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MatchError> = std::result::Result<T, E>;

/// Confidence band of a match; variants are ordered by increasing confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceTier {
    Speculative,
    Indirect,
    Direct,
}

impl ConfidenceTier {
    pub const ALL: [ConfidenceTier; 3] = [Self::Speculative, Self::Indirect, Self::Direct];

    /// Inclusive lower bound of the band.
    pub fn lower_bound(self) -> f32 {
        match self {
            Self::Speculative => 0.85,
            Self::Indirect => 0.90,
            Self::Direct => 0.95,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Speculative => "speculative",
            Self::Indirect => "indirect",
            Self::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ConfidenceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a cosine score to its tier. Bounds are inclusive.
pub fn classify_tier(score: f32) -> Option<ConfidenceTier> {
    if score >= ConfidenceTier::Direct.lower_bound() {
        Some(ConfidenceTier::Direct)
    } else if score >= ConfidenceTier::Indirect.lower_bound() {
        Some(ConfidenceTier::Indirect)
    } else if score >= ConfidenceTier::Speculative.lower_bound() {
        Some(ConfidenceTier::Speculative)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub floor: f32,
    pub exclude_same_doc: bool,
    pub max_hits_per_sentence: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            floor: DEFAULT_FLOOR,
            exclude_same_doc: true,
            max_hits_per_sentence: DEFAULT_MAX_HITS_PER_SENTENCE,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor >= ConfidenceTier::Speculative.lower_bound() && self.floor <= 1.0) {
            return Err(MatchError::InvalidConfig(format!("floor {} outside [0.85, 1]", self.floor)));
        }
        if self.max_hits_per_sentence == 0 {
            return Err(MatchError::InvalidConfig("max_hits_per_sentence must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub query_sentence_id: String,
    pub corpus_sentence_id: String,
    pub score: f32,
    pub tier: ConfidenceTier,
    pub query_doc_id: String,
    pub corpus_doc_id: String,
    pub corpus_pub_year: i32,
    pub corpus_disciplines: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookMatchCount {
    pub records: usize,
    pub distinct_sentences: usize,
}

/// A focus sentence whose hits were cut at `max_hits_per_sentence`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedSentence {
    pub sentence_id: String,
    pub total_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub focus_doc_id: String,
    pub focus_pub_year: i32,
    pub config: MatchConfig,
    pub index_manifest: Manifest,
    pub focus_sentence_count: usize,
    pub records: Vec<MatchRecord>,
    pub book_counts: BTreeMap<String, BookMatchCount>,
    pub truncated: Vec<TruncatedSentence>,
}

impl MatchSet {
    /// Assembles a set from records, deriving the per-book counts.
    pub fn from_records(
        focus_doc_id: String,
        focus_pub_year: i32,
        config: MatchConfig,
        index_manifest: Manifest,
        focus_sentence_count: usize,
        records: Vec<MatchRecord>,
        truncated: Vec<TruncatedSentence>,
    ) -> Self {
        let book_counts = book_counts(&records);
        Self { focus_doc_id, focus_pub_year, config, index_manifest, focus_sentence_count, records, book_counts, truncated }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn book_counts(records: &[MatchRecord]) -> BTreeMap<String, BookMatchCount> {
    let mut distinct: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut counts: BTreeMap<String, BookMatchCount> = BTreeMap::new();
    for r in records {
        counts.entry(r.corpus_doc_id.clone()).or_default().records += 1;
        distinct.entry(&r.corpus_doc_id).or_default().insert(&r.corpus_sentence_id);
    }
    for (doc, set) in distinct {
        counts.get_mut(doc).unwrap().distinct_sentences = set.len();
    }
    counts
}

/// Corpus books with at least `min_matching_sentences` distinct matched sentences.
pub fn influenced_books(match_set: &MatchSet, min_matching_sentences: usize) -> BTreeSet<String> {
    match_set
        .book_counts
        .iter()
        .filter(|(_, c)| c.distinct_sentences >= min_matching_sentences)
        .map(|(d, _)| d.clone())
        .collect()
}

/// Everything a query needs, checked for consistency once up front.
pub struct QueryContext<'a> {
    pub corpus: &'a CorpusStore,
    pub index: &'a VectorIndex,
    pub provider: &'a dyn EmbeddingProvider,
    pub embed_config: &'a EmbeddingProviderConfig,
}

impl<'a> QueryContext<'a> {
    /// Fails with `ManifestMismatch` unless the index was built from this
    /// corpus with this provider's model and dimension.
    pub fn new(
        corpus: &'a CorpusStore,
        index: &'a VectorIndex,
        provider: &'a dyn EmbeddingProvider,
        embed_config: &'a EmbeddingProviderConfig,
    ) -> Result<Self> {
        let manifest = index.manifest();
        let model = provider.model_id()?;
        if model != manifest.model {
            return Err(MatchError::ManifestMismatch { field: "model", index: manifest.model.clone(), current: model });
        }
        if provider.dimension() != index.dimension() {
            return Err(MatchError::ManifestMismatch {
                field: "dimension",
                index: index.dimension().to_string(),
                current: provider.dimension().to_string(),
            });
        }
        let hash = corpus.corpus_hash();
        if hash != manifest.corpus_hash {
            return Err(MatchError::ManifestMismatch {
                field: "corpus_hash",
                index: manifest.corpus_hash.clone(),
                current: hash,
            });
        }
        Ok(Self { corpus, index, provider, embed_config })
    }

    fn corpus_doc_of<'s>(&'s self, sentence_id: &'s str) -> Option<&'s str> {
        match self.corpus.sentence(sentence_id) {
            Some(s) => Some(&s.doc_id),
            None => parse_sentence_id(sentence_id).map(|(d, _)| d),
        }
    }

    /// Turns raw hits for one focus sentence into classified records.
    fn records_for(
        &self,
        query_sentence_id: &str,
        query_doc_id: &str,
        hits: Vec<SearchHit>,
        config: &MatchConfig,
    ) -> Result<(Vec<MatchRecord>, Option<TruncatedSentence>)> {
        let mut out = Vec::new();
        for hit in hits {
            if hit.score < config.floor {
                continue;
            }
            let Some(tier) = classify_tier(hit.score) else { continue };
            let doc_id = self
                .corpus_doc_of(&hit.sentence_id)
                .ok_or_else(|| MatchError::UnknownSentence(hit.sentence_id.clone()))?;
            if config.exclude_same_doc && doc_id == query_doc_id {
                continue;
            }
            let meta = &self
                .corpus
                .document(doc_id)
                .ok_or_else(|| MatchError::UnknownDocument(doc_id.to_string()))?
                .meta;
            out.push(MatchRecord {
                query_sentence_id: query_sentence_id.to_string(),
                corpus_sentence_id: hit.sentence_id,
                score: hit.score,
                tier,
                query_doc_id: query_doc_id.to_string(),
                corpus_doc_id: meta.doc_id.clone(),
                corpus_pub_year: meta.pub_year,
                corpus_disciplines: meta.disciplines.iter().cloned().collect(),
            });
        }
        let total = out.len();
        let truncated = (total > config.max_hits_per_sentence).then(|| {
            out.truncate(config.max_hits_per_sentence);
            TruncatedSentence { sentence_id: query_sentence_id.to_string(), total_hits: total }
        });
        Ok((out, truncated))
    }

    /// Matches for a single sentence, as returned inside [`query_book`].
    pub fn query_sentence(
        &self,
        sentence: &SentenceRecord,
        config: &MatchConfig,
    ) -> Result<(Vec<MatchRecord>, Option<TruncatedSentence>)> {
        config.validate()?;
        let q = embed_text(self.provider, &sentence.text)?;
        let hits = self.index.range_search(&q, config.floor)?;
        self.records_for(&sentence.sentence_id, &sentence.doc_id, hits, config)
    }
}

/// Queries every filtered sentence of `focus` against the index.
///
/// Records are ordered by focus sentence ordinal, then descending score,
/// then ascending corpus sentence id.
pub fn query_book(ctx: &QueryContext<'_>, focus: &Document, config: &MatchConfig) -> Result<MatchSet> {
    config.validate()?;
    let sentences = filter_document(focus, &ctx.corpus.config().filter);
    if sentences.is_empty() {
        return Err(MatchError::EmptyFocusBook(focus.meta.doc_id.clone()));
    }
    let vectors = embed_batch(&sentences, ctx.provider, ctx.embed_config)?;
    let queries: Vec<&[f32]> = vectors.iter().map(|v| v.values()).collect();
    let hits = ctx.index.range_search_many(&queries, config.floor)?;
    let per_sentence: Vec<(Vec<MatchRecord>, Option<TruncatedSentence>)> = sentences
        .par_iter()
        .zip(hits)
        .map(|(s, h)| ctx.records_for(&s.sentence_id, &s.doc_id, h, config))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut truncated = Vec::new();
    for (r, t) in per_sentence {
        records.extend(r);
        truncated.extend(t);
    }
    Ok(MatchSet::from_records(
        focus.meta.doc_id.clone(),
        focus.meta.pub_year,
        *config,
        ctx.index.manifest().clone(),
        sentences.len(),
        records,
        truncated,
    ))
}

/// Looks up a focus document in the corpus and queries it.
pub fn query_book_by_id(ctx: &QueryContext<'_>, doc_id: &str, config: &MatchConfig) -> Result<MatchSet> {
    let doc = ctx.corpus.document(doc_id).ok_or_else(|| MatchError::UnknownDocument(doc_id.to_string()))?;
    query_book(ctx, doc, config)
}

// ---------------------------------------------------------------------------
// Export

/// First line of every match export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub schema_version: u32,
    pub focus_doc_id: String,
    pub focus_pub_year: i32,
    pub config: MatchConfig,
    pub index_manifest: Manifest,
    pub focus_sentence_count: usize,
    pub record_count: usize,
    pub truncated: Vec<TruncatedSentence>,
    /// Extra per-record columns present in this export.
    #[serde(default)]
    pub extra_columns: Vec<String>,
}

impl ExportHeader {
    pub fn for_set(set: &MatchSet, extra_columns: &[&str]) -> Self {
        Self {
            schema_version: MATCH_SCHEMA_VERSION,
            focus_doc_id: set.focus_doc_id.clone(),
            focus_pub_year: set.focus_pub_year,
            config: set.config,
            index_manifest: set.index_manifest.clone(),
            focus_sentence_count: set.focus_sentence_count,
            record_count: set.records.len(),
            truncated: set.truncated.clone(),
            extra_columns: extra_columns.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub const CSV_COLUMNS: [&str; 8] = [
    "query_sentence_id",
    "corpus_sentence_id",
    "score",
    "tier",
    "query_doc_id",
    "corpus_doc_id",
    "corpus_pub_year",
    "corpus_disciplines",
];

pub(crate) fn csv_fields(r: &MatchRecord) -> Vec<String> {
    vec![
        r.query_sentence_id.clone(),
        r.corpus_sentence_id.clone(),
        r.score.to_string(),
        r.tier.to_string(),
        r.query_doc_id.clone(),
        r.corpus_doc_id.clone(),
        r.corpus_pub_year.to_string(),
        r.corpus_disciplines.join(";"),
    ]
}

pub(crate) fn json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")
}

/// Header line, then one JSON object per record.
pub fn write_jsonl<W: Write>(set: &MatchSet, mut w: W) -> std::io::Result<()> {
    json_line(&mut w, &serde_json::json!({ "header": ExportHeader::for_set(set, &[]) }))?;
    for r in &set.records {
        json_line(&mut w, r)?;
    }
    Ok(())
}

/// `# <header json>` line, then a CSV table with [`CSV_COLUMNS`].
pub fn write_csv<W: Write>(set: &MatchSet, mut w: W) -> std::io::Result<()> {
    write_csv_with(set, &[], |_| Vec::new(), &mut w)
}

pub(crate) fn write_csv_with<W: Write>(
    set: &MatchSet,
    extra: &[&str],
    extra_fields: impl Fn(usize) -> Vec<String>,
    w: &mut W,
) -> std::io::Result<()> {
    w.write_all(b"# ")?;
    json_line(w, &ExportHeader::for_set(set, extra))?;
    let mut cw = csv::Writer::from_writer(w);
    let header: Vec<&str> = CSV_COLUMNS.iter().copied().chain(extra.iter().copied()).collect();
    cw.write_record(&header)?;
    for (i, r) in set.records.iter().enumerate() {
        let mut f = csv_fields(r);
        f.extend(extra_fields(i));
        cw.write_record(&f)?;
    }
    cw.flush()
}

/// Reads back a [`write_jsonl`] export.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<MatchSet> {
    #[derive(Deserialize)]
    struct HeaderLine {
        header: ExportHeader,
    }
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| MatchError::Format("empty export".into()))??;
    let header = serde_json::from_str::<HeaderLine>(&first)
        .map_err(|e| MatchError::Format(format!("header: {e}")))?
        .header;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| MatchError::Format(format!("line {}: {e}", i + 2)))?,
        );
    }
    if records.len() != header.record_count {
        return Err(MatchError::Format(format!(
            "header declares {} records, found {}",
            header.record_count,
            records.len()
        )));
    }
    Ok(MatchSet::from_records(
        header.focus_doc_id,
        header.focus_pub_year,
        header.config,
        header.index_manifest,
        header.focus_sentence_count,
        records,
        header.truncated,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusConfig, DocumentMeta, FilterConfig};
    use crate::embed::{EmbeddingVector, HashEmbedder};
    use crate::vindex::{build_index, IndexSpec};
    use proptest::prelude::*;

    #[test]
    fn table_one_tiers() {
        assert_eq!(classify_tier(0.97), Some(ConfidenceTier::Direct));
        assert_eq!(classify_tier(0.92), Some(ConfidenceTier::Indirect));
        assert_eq!(classify_tier(0.85), Some(ConfidenceTier::Speculative));
        assert_eq!(classify_tier(0.95), Some(ConfidenceTier::Direct));
        assert_eq!(classify_tier(0.90), Some(ConfidenceTier::Indirect));
        assert_eq!(classify_tier(0.8499), None);
        assert_eq!(classify_tier(-1.0), None);
        assert_eq!(classify_tier(1.0), Some(ConfidenceTier::Direct));
    }

    proptest! {
        #[test]
        fn classify_is_monotone(a in -1.0f32..=1.0, b in -1.0f32..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify_tier(lo) <= classify_tier(hi));
            let t = classify_tier(a);
            let preds = [
                (0.85..0.90).contains(&a),
                (0.90..0.95).contains(&a),
                a >= 0.95,
            ];
            prop_assert!(preds.iter().filter(|&&p| p).count() <= 1);
            prop_assert_eq!(t.is_some(), preds.iter().any(|&p| p));
        }
    }

    fn rec(q: &str, c: &str, doc: &str) -> MatchRecord {
        MatchRecord {
            query_sentence_id: q.into(),
            corpus_sentence_id: c.into(),
            score: 0.9,
            tier: ConfidenceTier::Indirect,
            query_doc_id: "focus".into(),
            corpus_doc_id: doc.into(),
            corpus_pub_year: 1870,
            corpus_disciplines: vec!["geology".into()],
        }
    }

    fn set_of(records: Vec<MatchRecord>) -> MatchSet {
        MatchSet::from_records("focus".into(), 1859, MatchConfig::default(), Manifest::now("m", "h"), 10, records, vec![])
    }

    #[test]
    fn influenced_threshold_is_six_distinct() {
        let mut records = Vec::new();
        for i in 0..6 {
            records.push(rec(&format!("focus#{i}"), &format!("a#{i}"), "a"));
        }
        for i in 0..5 {
            records.push(rec(&format!("focus#{i}"), &format!("b#{i}"), "b"));
            // Repeats of the same corpus sentence are not distinct.
            records.push(rec(&format!("focus#{}", i + 1), &format!("b#{i}"), "b"));
        }
        let set = set_of(records);
        assert_eq!(set.book_counts["b"], BookMatchCount { records: 10, distinct_sentences: 5 });
        let books = influenced_books(&set, DEFAULT_MIN_MATCHING_SENTENCES);
        assert_eq!(books.into_iter().collect::<Vec<_>>(), vec!["a".to_string()]);
        assert!(influenced_books(&set_of(vec![]), 6).is_empty());
    }

    #[test]
    fn export_round_trip_and_csv_shape() {
        let set = set_of(vec![rec("focus#0", "a#1", "a"), rec("focus#1", "b, \"x\"#2", "b")]);
        let mut buf = Vec::new();
        write_jsonl(&set, &mut buf).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), set);

        let mut csv_buf = Vec::new();
        write_csv(&set, &mut csv_buf).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# {"));
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let body: String = lines.collect::<Vec<_>>().join("\n");
        let table = format!("{}\n{}", CSV_COLUMNS.join(","), body);
        let mut rdr = csv::Reader::from_reader(table.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1][1], "b, \"x\"#2");
    }

    fn doc(id: &str, year: i32, text: &str) -> (DocumentMeta, String) {
        (
            DocumentMeta {
                doc_id: id.into(),
                title: id.into(),
                author: "a".into(),
                pub_year: year,
                disciplines: Default::default(),
                is_correspondent: false,
                source: String::new(),
            },
            text.into(),
        )
    }

    fn setup(docs: &[(DocumentMeta, String)]) -> (CorpusStore, VectorIndex, HashEmbedder, EmbeddingProviderConfig) {
        let cfg = CorpusConfig { filter: FilterConfig::disabled(), ..Default::default() };
        let mut store = CorpusStore::in_memory(cfg);
        for (m, t) in docs {
            store.ingest_document(m.clone(), t.clone()).unwrap();
        }
        let p = HashEmbedder::new(256);
        let ec = EmbeddingProviderConfig::hash(256);
        let vs: Vec<EmbeddingVector> = embed_batch(store.sentences(), &p, &ec).unwrap();
        let idx = build_index(&vs, IndexSpec::Flat, Manifest::now(p.model_id().unwrap(), store.corpus_hash())).unwrap();
        (store, idx, p, ec)
    }

    #[test]
    fn duplicate_book_matches_itself_directly() {
        let text = "The struggle for existence is severe. Variation is inherited in part. Selection acts slowly.";
        let (store, idx, p, ec) = setup(&[doc("focus", 1859, text), doc("copy", 1860, text)]);
        let ctx = QueryContext::new(&store, &idx, &p, &ec).unwrap();
        let set = query_book_by_id(&ctx, "focus", &MatchConfig::default()).unwrap();
        assert_eq!(set.records.len(), 3);
        for (i, r) in set.records.iter().enumerate() {
            assert_eq!(r.tier, ConfidenceTier::Direct);
            assert_eq!(r.corpus_sentence_id, format!("copy#{i}"));
            assert!((r.score - 1.0).abs() < 1e-6);
        }
        let single = ctx.query_sentence(store.sentence("focus#1").unwrap(), &MatchConfig::default()).unwrap();
        assert_eq!(single.0, vec![set.records[1].clone()]);
    }

    #[test]
    fn same_doc_matches_are_excluded() {
        let (store, idx, p, ec) = setup(&[
            doc("focus", 1859, "Coral reefs grow slowly upward. Coral reefs grow slowly upward."),
            doc("other", 1870, "Entirely unrelated prose concerning railway finance."),
        ]);
        let ctx = QueryContext::new(&store, &idx, &p, &ec).unwrap();
        let set = query_book_by_id(&ctx, "focus", &MatchConfig::default()).unwrap();
        assert!(set.is_empty());
        let keep = MatchConfig { exclude_same_doc: false, ..Default::default() };
        assert_eq!(query_book_by_id(&ctx, "focus", &keep).unwrap().records.len(), 4);
    }

    #[test]
    fn truncation_is_reported() {
        let s = "A repeated printer's notice.";
        let (store, idx, p, ec) = setup(&[
            doc("focus", 1859, s),
            doc("a", 1860, s),
            doc("b", 1861, s),
            doc("c", 1862, s),
        ]);
        let ctx = QueryContext::new(&store, &idx, &p, &ec).unwrap();
        let cfg = MatchConfig { max_hits_per_sentence: 2, ..Default::default() };
        let set = query_book_by_id(&ctx, "focus", &cfg).unwrap();
        assert_eq!(set.records.len(), 2);
        assert_eq!(set.truncated, vec![TruncatedSentence { sentence_id: "focus#0".into(), total_hits: 3 }]);
        assert_eq!(set.records[0].corpus_doc_id, "a");
    }

    #[test]
    fn manifest_mismatch_and_empty_focus() {
        let (store, idx, _, ec) = setup(&[doc("focus", 1859, "Some text here."), doc("x", 1860, "Other words.")]);
        let wrong = HashEmbedder::new(128);
        let ec128 = EmbeddingProviderConfig::hash(128);
        assert!(matches!(
            QueryContext::new(&store, &idx, &wrong, &ec128),
            Err(MatchError::ManifestMismatch { field: "model", .. })
        ));
        let p = HashEmbedder::new(256);
        let ctx = QueryContext::new(&store, &idx, &p, &ec).unwrap();
        let (m, _) = doc("empty", 1859, "");
        let empty = Document { meta: m, raw_text: "   ".into() };
        assert!(matches!(query_book(&ctx, &empty, &MatchConfig::default()), Err(MatchError::EmptyFocusBook(_))));
        let (other_store, ..) = setup(&[doc("focus", 1859, "Changed text.")]);
        assert!(matches!(
            QueryContext::new(&other_store, &idx, &p, &ec),
            Err(MatchError::ManifestMismatch { field: "corpus_hash", .. })
        ));
    }

    #[test]
    fn raising_floor_never_adds_records() {
        let (store, idx, p, ec) = setup(&[
            doc("focus", 1859, "The eye is a marvellous organ of sight. Natural selection preserves variations."),
            doc("a", 1860, "The eye is a marvellous organ of sight! Natural selection preserves some variations."),
            doc("b", 1861, "The eye is a marvelous organ for sight. Natural selection preserves useful variations."),
        ]);
        let ctx = QueryContext::new(&store, &idx, &p, &ec).unwrap();
        let mut prev: Option<usize> = None;
        for floor in [0.85f32, 0.88, 0.9, 0.93, 0.95, 0.99] {
            let n = query_book_by_id(&ctx, "focus", &MatchConfig { floor, ..Default::default() }).unwrap().records.len();
            if let Some(p) = prev {
                assert!(n <= p);
            }
            prev = Some(n);
        }
        assert!(MatchConfig { floor: 0.5, ..Default::default() }.validate().is_err());
    }
}
