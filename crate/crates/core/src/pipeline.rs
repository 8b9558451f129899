//! The in-process pipeline: corpus to index, focus book to report. The CLI
//! and the HTTP service are thin wrappers around these functions.

use thiserror::Error;

use crate::analytics::{
    alluvial_flows, build_timeline, discipline_table, render_report, AlluvialFlow, AnalyticsError, CorpusMeta,
    DisciplineInfluence, InfluenceTimeline, ReportBundle, ReportFormat, SimilarityStatistic,
};
use crate::corpus::{CorpusConfig, CorpusError, CorpusStore, IngestRecord};
use crate::embed::{embed_batch, EmbedError, EmbeddingProvider, EmbeddingProviderConfig, EmbeddingVector};
use crate::matching::{query_book_by_id, MatchConfig, MatchError, MatchSet, QueryContext, DEFAULT_MIN_MATCHING_SENTENCES};
use crate::vindex::{build_index, IndexSpec, Manifest, VectorIndex, VindexError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] VindexError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub fn store_from_records(records: Vec<IngestRecord>, config: CorpusConfig) -> Result<CorpusStore> {
    let mut store = CorpusStore::in_memory(config);
    for r in records {
        let (meta, text) = r.into_parts();
        store.ingest_document(meta, text)?;
    }
    Ok(store)
}

/// Embeddings for every filtered sentence of the corpus, in store order.
pub fn embed_corpus(
    store: &CorpusStore,
    provider: &dyn EmbeddingProvider,
    config: &EmbeddingProviderConfig,
) -> Result<Vec<EmbeddingVector>> {
    Ok(embed_batch(store.sentences(), provider, config)?)
}

/// Index over precomputed embeddings, stamped with the corpus hash.
pub fn index_embeddings(
    store: &CorpusStore,
    vectors: &[EmbeddingVector],
    model: &str,
    spec: IndexSpec,
) -> Result<VectorIndex> {
    Ok(build_index(vectors, spec, Manifest::now(model, store.corpus_hash()))?)
}

pub fn build_corpus_index(
    store: &CorpusStore,
    provider: &dyn EmbeddingProvider,
    config: &EmbeddingProviderConfig,
    spec: IndexSpec,
) -> Result<VectorIndex> {
    let vectors = embed_corpus(store, provider, config)?;
    index_embeddings(store, &vectors, &provider.model_id()?, spec)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportConfig {
    pub match_config: MatchConfig,
    pub statistic: SimilarityStatistic,
    pub min_matching_sentences: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            match_config: MatchConfig::default(),
            statistic: SimilarityStatistic::default(),
            min_matching_sentences: DEFAULT_MIN_MATCHING_SENTENCES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analytics {
    pub timeline: InfluenceTimeline,
    pub disciplines: Vec<DisciplineInfluence>,
    pub flows: Vec<AlluvialFlow>,
}

pub fn analyze(set: &MatchSet, meta: &CorpusMeta, config: &ReportConfig) -> Result<Analytics> {
    let year = set.focus_pub_year;
    Ok(Analytics {
        timeline: build_timeline(set, meta, year, config.statistic)?,
        disciplines: discipline_table(set, meta, year, config.min_matching_sentences),
        flows: alluvial_flows(set, year),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub match_set: MatchSet,
    pub analytics: Analytics,
    pub bundle: ReportBundle,
}

/// Queries the focus book and renders its report.
pub fn run_report(
    ctx: &QueryContext<'_>,
    focus_doc_id: &str,
    config: &ReportConfig,
    format: ReportFormat,
) -> Result<ReportOutput> {
    let match_set = query_book_by_id(ctx, focus_doc_id, &config.match_config)?;
    let analytics = analyze(&match_set, &CorpusMeta::from_store(ctx.corpus), config)?;
    let bundle = render_report(&analytics.timeline, &analytics.disciplines, &analytics.flows, format)?;
    Ok(ReportOutput { match_set, analytics, bundle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::REPORT_JSON;
    use crate::embed::HashEmbedder;
    use crate::synth::{generate, SynthBook, SynthSpec};

    #[test]
    fn small_pipeline_finds_plants() {
        let mut late = SynthBook::new("late", 1870, &["geology"]);
        late.planted = (0..6).collect();
        let mut early = SynthBook::new("early", 1840, &["chemistry"]);
        early.planted = vec![7];
        let spec = SynthSpec {
            seed: 4,
            focus_doc_id: "focus".into(),
            focus_pub_year: 1859,
            focus_sentences: 10,
            books: vec![late, early, SynthBook::new("other", 1880, &[])],
        };
        let synth = generate(&spec);
        let store = store_from_records(synth.records, CorpusConfig::default()).unwrap();
        let cfg = EmbeddingProviderConfig::hash(128);
        let provider = HashEmbedder::new(128);
        let index = build_corpus_index(&store, &provider, &cfg, IndexSpec::Flat).unwrap();
        let ctx = QueryContext::new(&store, &index, &provider, &cfg).unwrap();
        let out = run_report(&ctx, "focus", &ReportConfig::default(), ReportFormat::Bundle).unwrap();
        assert_eq!(out.match_set.records.len(), 7);
        let geo = out.analytics.disciplines.iter().find(|d| d.discipline == "geology").unwrap();
        assert_eq!((geo.eligible_books, geo.influenced_books), (1, 1));
        // Mean statistic: verbatim copies score 1, the unmatched later book 0.
        let t = &out.analytics.timeline;
        assert!((t.pre_mean - 1.0).abs() < 1e-6 && (t.post_mean - 0.5).abs() < 1e-6);
        assert!(out.bundle.get(REPORT_JSON).is_some());
    }
}
