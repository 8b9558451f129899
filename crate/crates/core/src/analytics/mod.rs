//! Aggregations over a [`MatchSet`]: per-year similarity timeline,
//! per-discipline influence percentages, and origin/afterlife flows.
//!
//! Books published in the focus book's own year count as post-publication.

mod render;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusStore, DocumentMeta};
use crate::matching::{influenced_books, ConfidenceTier, MatchRecord, MatchSet};

pub use render::{
    render_report, ReportBundle, ReportFormat, ReportJson, ReportSummary, ALLUVIAL_SVG, DISCIPLINES_SVG, REPORT_JSON,
    REPORT_SCHEMA_VERSION, TIMELINE_SVG,
};

/// Pseudo-discipline row for correspondent-flagged books.
pub const CORRESPONDENTS: &str = "correspondents";
/// Flow label for books without any discipline.
pub const UNCLASSIFIED: &str = "unclassified";

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("no metadata for corpus document {0:?}")]
    MissingMetadata(String),
    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AnalyticsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookInfo {
    pub meta: DocumentMeta,
    /// Filtered sentence count; the denominator for `NormalizedCount`.
    pub sentence_count: usize,
}

/// Metadata of every corpus book plus the discipline registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusMeta {
    books: BTreeMap<String, BookInfo>,
    registry: BTreeSet<String>,
}

impl CorpusMeta {
    pub fn new(books: impl IntoIterator<Item = BookInfo>, registry: BTreeSet<String>) -> Self {
        Self {
            books: books.into_iter().map(|b| (b.meta.doc_id.clone(), b)).collect(),
            registry,
        }
    }

    pub fn from_store(store: &CorpusStore) -> Self {
        let books = store.documents().iter().map(|d| BookInfo {
            meta: d.meta.clone(),
            sentence_count: store.document_sentences(&d.meta.doc_id).map_or(0, |s| s.len()),
        });
        Self::new(books, store.config().registry())
    }

    pub fn get(&self, doc_id: &str) -> Option<&BookInfo> {
        self.books.get(doc_id)
    }

    pub fn books(&self) -> impl Iterator<Item = &BookInfo> {
        self.books.values()
    }

    pub fn registry(&self) -> &BTreeSet<String> {
        &self.registry
    }
}

/// Per-book similarity statistic used by the timeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityStatistic {
    /// Mean score of the book's matches; 0 for unmatched books.
    #[default]
    Mean,
    /// Highest match score; 0 for unmatched books.
    Max,
    /// Distinct matched sentences divided by the book's sentence count.
    NormalizedCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub year: i32,
    pub mean_similarity: f64,
    pub book_count: usize,
    pub match_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTimeline {
    pub focus_doc_id: String,
    pub pub_year: i32,
    pub statistic: SimilarityStatistic,
    pub points: Vec<TimelinePoint>,
    pub pre_mean: f64,
    pub post_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisciplineInfluence {
    pub discipline: String,
    pub eligible_books: usize,
    pub influenced_books: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    Origin,
    Afterlife,
}

impl FlowDirection {
    pub fn of(corpus_year: i32, focus_year: i32) -> Self {
        if corpus_year < focus_year {
            Self::Origin
        } else {
            Self::Afterlife
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlluvialFlow {
    pub direction: FlowDirection,
    pub discipline: String,
    pub tier: ConfidenceTier,
    pub weight: f64,
}

fn book_statistic(records: &[&MatchRecord], info: &BookInfo, stat: SimilarityStatistic) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    match stat {
        SimilarityStatistic::Mean => records.iter().map(|r| r.score as f64).sum::<f64>() / records.len() as f64,
        SimilarityStatistic::Max => records.iter().map(|r| r.score as f64).fold(0.0, f64::max),
        SimilarityStatistic::NormalizedCount => {
            let distinct: BTreeSet<&str> = records.iter().map(|r| r.corpus_sentence_id.as_str()).collect();
            if info.sentence_count == 0 {
                0.0
            } else {
                (distinct.len() as f64 / info.sentence_count as f64).min(1.0)
            }
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Per-year mean of a per-book similarity statistic over every corpus book
/// other than the focus book, with pre- and post-publication means taken
/// over the book-level values.
pub fn build_timeline(
    match_set: &MatchSet,
    corpus_meta: &CorpusMeta,
    pub_year: i32,
    statistic: SimilarityStatistic,
) -> Result<InfluenceTimeline> {
    let mut by_book: BTreeMap<&str, Vec<&MatchRecord>> = BTreeMap::new();
    for r in &match_set.records {
        if corpus_meta.get(&r.corpus_doc_id).is_none() {
            return Err(AnalyticsError::MissingMetadata(r.corpus_doc_id.clone()));
        }
        by_book.entry(&r.corpus_doc_id).or_default().push(r);
    }
    let mut years: BTreeMap<i32, (Vec<f64>, usize)> = BTreeMap::new();
    let (mut pre, mut post) = (Vec::new(), Vec::new());
    for book in corpus_meta.books() {
        if book.meta.doc_id == match_set.focus_doc_id {
            continue;
        }
        let recs = by_book.get(book.meta.doc_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let value = book_statistic(recs, book, statistic);
        let entry = years.entry(book.meta.pub_year).or_default();
        entry.0.push(value);
        entry.1 += recs.len();
        match FlowDirection::of(book.meta.pub_year, pub_year) {
            FlowDirection::Origin => pre.push(value),
            FlowDirection::Afterlife => post.push(value),
        }
    }
    let points = years
        .into_iter()
        .map(|(year, (values, match_count))| TimelinePoint {
            year,
            mean_similarity: mean(&values),
            book_count: values.len(),
            match_count,
        })
        .collect();
    Ok(InfluenceTimeline {
        focus_doc_id: match_set.focus_doc_id.clone(),
        pub_year,
        statistic,
        points,
        pre_mean: mean(&pre),
        post_mean: mean(&post),
    })
}

/// Share of post-publication books per discipline that count as influenced,
/// plus a [`CORRESPONDENTS`] row. A book in k disciplines counts in all k rows.
pub fn discipline_table(
    match_set: &MatchSet,
    corpus_meta: &CorpusMeta,
    pub_year: i32,
    min_matching_sentences: usize,
) -> Vec<DisciplineInfluence> {
    let influenced = influenced_books(match_set, min_matching_sentences);
    let mut rows: BTreeMap<String, (usize, usize)> =
        corpus_meta.registry().iter().map(|d| (d.clone(), (0, 0))).collect();
    let mut correspondents = (0usize, 0usize);
    for book in corpus_meta.books() {
        let m = &book.meta;
        if m.doc_id == match_set.focus_doc_id || m.pub_year < pub_year {
            continue;
        }
        let hit = influenced.contains(&m.doc_id) as usize;
        for d in &m.disciplines {
            let row = rows.entry(d.clone()).or_default();
            row.0 += 1;
            row.1 += hit;
        }
        if m.is_correspondent {
            correspondents.0 += 1;
            correspondents.1 += hit;
        }
    }
    let row = |discipline: String, (eligible, hit): (usize, usize)| DisciplineInfluence {
        discipline,
        eligible_books: eligible,
        influenced_books: hit,
        percent: if eligible == 0 { 0.0 } else { 100.0 * hit as f64 / eligible as f64 },
    };
    let mut out: Vec<_> = rows.into_iter().map(|(d, c)| row(d, c)).collect();
    out.push(row(CORRESPONDENTS.to_string(), correspondents));
    out
}

/// Each record adds weight 1, split evenly over its book's disciplines.
pub fn alluvial_flows(match_set: &MatchSet, pub_year: i32) -> Vec<AlluvialFlow> {
    let mut acc: BTreeMap<(FlowDirection, String, ConfidenceTier), f64> = BTreeMap::new();
    for r in &match_set.records {
        let direction = FlowDirection::of(r.corpus_pub_year, pub_year);
        if r.corpus_disciplines.is_empty() {
            *acc.entry((direction, UNCLASSIFIED.to_string(), r.tier)).or_default() += 1.0;
            continue;
        }
        let share = 1.0 / r.corpus_disciplines.len() as f64;
        for d in &r.corpus_disciplines {
            *acc.entry((direction, d.clone(), r.tier)).or_default() += share;
        }
    }
    acc.into_iter()
        .map(|((direction, discipline, tier), weight)| AlluvialFlow { direction, discipline, tier, weight })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{MatchConfig, DEFAULT_MIN_MATCHING_SENTENCES};
    use crate::vindex::Manifest;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn book(id: &str, year: i32, disciplines: &[&str], correspondent: bool) -> BookInfo {
        BookInfo {
            meta: DocumentMeta {
                doc_id: id.into(),
                title: id.into(),
                author: "a".into(),
                pub_year: year,
                disciplines: disciplines.iter().map(|s| s.to_string()).collect(),
                is_correspondent: correspondent,
                source: String::new(),
            },
            sentence_count: 20,
        }
    }

    fn registry() -> BTreeSet<String> {
        crate::corpus::DEFAULT_DISCIPLINES.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn record(meta: &CorpusMeta, doc: &str, sentence: usize, score: f32) -> MatchRecord {
        let m = &meta.get(doc).unwrap().meta;
        MatchRecord {
            query_sentence_id: format!("focus#{sentence}"),
            corpus_sentence_id: format!("{doc}#{sentence}"),
            score,
            tier: crate::matching::classify_tier(score).unwrap_or(ConfidenceTier::Speculative),
            query_doc_id: "focus".into(),
            corpus_doc_id: doc.into(),
            corpus_pub_year: m.pub_year,
            corpus_disciplines: m.disciplines.iter().cloned().collect(),
        }
    }

    pub(crate) fn set(records: Vec<MatchRecord>) -> MatchSet {
        MatchSet::from_records("focus".into(), 1859, MatchConfig::default(), Manifest::now("m", "h"), 20, records, vec![])
    }

    #[test]
    fn timeline_arithmetic() {
        let meta = CorpusMeta::new([book("focus", 1859, &[], false), book("a", 1870, &[], false)], registry());
        let s = set(vec![record(&meta, "a", 0, 0.9), record(&meta, "a", 1, 0.8)]);
        let t = build_timeline(&s, &meta, 1859, SimilarityStatistic::Mean).unwrap();
        assert_eq!(t.points.len(), 1);
        assert_eq!(t.points[0].year, 1870);
        assert!((t.points[0].mean_similarity - 0.85).abs() < 1e-6);
        assert_eq!(t.points[0].match_count, 2);
        assert_eq!(t.pre_mean, 0.0);
        assert!((t.post_mean - 0.85).abs() < 1e-6);
        let max = build_timeline(&s, &meta, 1859, SimilarityStatistic::Max).unwrap();
        assert!((max.points[0].mean_similarity - 0.9).abs() < 1e-6);
        let norm = build_timeline(&s, &meta, 1859, SimilarityStatistic::NormalizedCount).unwrap();
        assert!((norm.points[0].mean_similarity - 0.1).abs() < 1e-12);
    }

    #[test]
    fn timeline_without_matches_is_flat_zero() {
        let meta = CorpusMeta::new(
            [book("focus", 1859, &[], false), book("a", 1850, &[], false), book("b", 1860, &[], false)],
            registry(),
        );
        let t = build_timeline(&set(vec![]), &meta, 1859, SimilarityStatistic::Mean).unwrap();
        assert!(t.points.iter().all(|p| p.mean_similarity == 0.0 && p.book_count == 1));
        assert_eq!((t.pre_mean, t.post_mean), (0.0, 0.0));
    }

    #[test]
    fn publication_year_counts_as_post() {
        let meta = CorpusMeta::new([book("same", 1859, &["geology"], false)], registry());
        let s = set(vec![record(&meta, "same", 0, 0.97)]);
        let t = build_timeline(&s, &meta, 1859, SimilarityStatistic::Mean).unwrap();
        assert_eq!(t.pre_mean, 0.0);
        assert!(t.post_mean > 0.9);
        let flows = alluvial_flows(&s, 1859);
        assert_eq!(flows[0].direction, FlowDirection::Afterlife);
    }

    #[test]
    fn missing_metadata_is_reported() {
        let meta = CorpusMeta::new([book("a", 1870, &[], false)], registry());
        let mut r = record(&meta, "a", 0, 0.9);
        r.corpus_doc_id = "ghost".into();
        assert!(matches!(
            build_timeline(&set(vec![r]), &meta, 1859, SimilarityStatistic::Mean),
            Err(AnalyticsError::MissingMetadata(id)) if id == "ghost"
        ));
    }

    #[test]
    fn geology_thirty_percent() {
        let mut books = vec![book("focus", 1859, &["natural_history"], false)];
        for i in 0..10 {
            books.push(book(&format!("g{i}"), 1860 + i, &["geology"], false));
        }
        books.push(book("old", 1850, &["geology"], false));
        let meta = CorpusMeta::new(books, registry());
        let mut records = Vec::new();
        for g in ["g0", "g4", "g7", "old"] {
            for s in 0..6 {
                records.push(record(&meta, g, s, 0.9));
            }
        }
        // Five matches are not enough.
        for s in 0..5 {
            records.push(record(&meta, "g9", s, 0.9));
        }
        let table = discipline_table(&set(records), &meta, 1859, DEFAULT_MIN_MATCHING_SENTENCES);
        let geo = table.iter().find(|r| r.discipline == "geology").unwrap();
        assert_eq!((geo.eligible_books, geo.influenced_books), (10, 3));
        assert!((geo.percent - 30.0).abs() < 1e-12);
        let chem = table.iter().find(|r| r.discipline == "chemistry").unwrap();
        assert_eq!(chem.percent, 0.0);
        assert_eq!(table.last().unwrap().discipline, CORRESPONDENTS);
        assert_eq!(table.len(), registry().len() + 1);
    }

    #[test]
    fn empty_set_gives_zero_percent() {
        let meta = CorpusMeta::new([book("a", 1870, &["geology"], true)], registry());
        assert!(discipline_table(&set(vec![]), &meta, 1859, 6).iter().all(|r| r.percent == 0.0));
    }

    #[test]
    fn multi_discipline_flow_splits() {
        let meta = CorpusMeta::new([book("a", 1870, &["geology", "natural_history"], false)], registry());
        let flows = alluvial_flows(&set(vec![record(&meta, "a", 0, 0.97)]), 1859);
        assert_eq!(flows.len(), 2);
        for f in &flows {
            assert_eq!(f.direction, FlowDirection::Afterlife);
            assert_eq!(f.tier, ConfidenceTier::Direct);
            assert_eq!(f.weight, 0.5);
        }
    }

    #[test]
    fn pre_publication_only_has_no_afterlife() {
        let meta = CorpusMeta::new([book("a", 1830, &["geology"], false), book("b", 1858, &[], false)], registry());
        let flows = alluvial_flows(&set(vec![record(&meta, "a", 0, 0.9), record(&meta, "b", 1, 0.86)]), 1859);
        assert!(flows.iter().all(|f| f.direction == FlowDirection::Origin));
        assert!(flows.iter().any(|f| f.discipline == UNCLASSIFIED));
    }

    fn random_meta(rng: &mut ChaCha8Rng, n: usize) -> CorpusMeta {
        let labels: Vec<&str> = crate::corpus::DEFAULT_DISCIPLINES.to_vec();
        let books = (0..n).map(|i| {
            let k = rng.gen_range(0..4);
            let ds: Vec<&str> = (0..k).map(|_| labels[rng.gen_range(0..labels.len())]).collect();
            book(&format!("b{i}"), rng.gen_range(1800..1920), &ds, rng.gen_bool(0.2))
        });
        CorpusMeta::new(books.collect::<Vec<_>>(), registry())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn flows_conserve_weight_and_stats_are_consistent(seed in any::<u64>(), n in 1usize..30, m in 0usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let meta = random_meta(&mut rng, n);
            let records: Vec<_> = (0..m)
                .map(|i| record(&meta, &format!("b{}", rng.gen_range(0..n)), i, rng.gen_range(0.85f32..1.0)))
                .collect();
            let s = set(records);
            let total: f64 = alluvial_flows(&s, 1859).iter().map(|f| f.weight).sum();
            prop_assert!((total - m as f64).abs() < 1e-9);

            // pre/post means recomputed from points by book-weighted fold.
            let t = build_timeline(&s, &meta, 1859, SimilarityStatistic::Mean).unwrap();
            let fold = |pred: &dyn Fn(i32) -> bool| {
                let (num, den) = t.points.iter().filter(|p| pred(p.year))
                    .fold((0.0, 0usize), |(a, b), p| (a + p.mean_similarity * p.book_count as f64, b + p.book_count));
                if den == 0 { 0.0 } else { num / den as f64 }
            };
            prop_assert!((fold(&|y| y < 1859) - t.pre_mean).abs() < 1e-9);
            prop_assert!((fold(&|y| y >= 1859) - t.post_mean).abs() < 1e-9);
            for p in &t.points {
                prop_assert!(p.book_count >= 1 && (0.0..=1.0).contains(&p.mean_similarity));
            }

            // Order independence: shuffled insertion gives the same table.
            let table = discipline_table(&s, &meta, 1859, 2);
            let mut books: Vec<BookInfo> = meta.books().cloned().collect();
            books.reverse();
            let shuffled = CorpusMeta::new(books, registry());
            prop_assert_eq!(&table, &discipline_table(&s, &shuffled, 1859, 2));
            for r in &table {
                prop_assert!(r.influenced_books <= r.eligible_books);
            }
        }
    }
}
