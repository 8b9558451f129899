//! Local JSON API over a corpus store and its index.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use lineage_core::analytics::{
    alluvial_flows, build_timeline, discipline_table, AlluvialFlow, CorpusMeta, DisciplineInfluence,
    FlowDirection, InfluenceTimeline, SimilarityStatistic,
};
use lineage_core::corpus::{CorpusStore, DocumentMeta, SentenceRecord};
use lineage_core::embed::EmbeddingProvider;
use lineage_core::matching::{query_book, ConfidenceTier, MatchConfig, MatchRecord, MatchSet, QueryContext};
use lineage_core::vindex::VectorIndex;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::commands::{load_index, open_store};
use crate::error::{match_kind, CliError};
use crate::jobs::{JobDescriptor, JobRequest, JobTable};
use crate::settings::Settings;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self { status, error, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        let kind = e.kind();
        let status = match kind {
            "NotFound" | "UnknownDocument" | "UnknownSentence" => StatusCode::NOT_FOUND,
            "IndexNotBuilt" => StatusCode::CONFLICT,
            "ManifestMismatch" | "EmptyFocusBook" => StatusCode::UNPROCESSABLE_ENTITY,
            "InvalidMatchConfig" | "InvalidThreshold" | "Usage" => StatusCode::BAD_REQUEST,
            "ProviderUnavailable" => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// One loaded generation of corpus and index. Replaced wholesale after a
/// mutating job, so reads in flight keep the generation they started on.
pub struct Generation {
    store: CorpusStore,
    meta: CorpusMeta,
    provider: Box<dyn EmbeddingProvider>,
    /// The index, already checked against corpus and provider.
    index: Result<VectorIndex, ApiError>,
    match_sets: Mutex<HashMap<(String, u32), Arc<MatchSet>>>,
}

impl Generation {
    pub fn load(settings: &Settings) -> Result<Self, CliError> {
        let store = open_store(settings)?;
        let provider = settings.embedding.build_provider()?;
        let index = load_index(&settings.index_path).and_then(|index| {
            QueryContext::new(&store, &index, provider.as_ref(), &settings.embedding)?;
            Ok(index)
        });
        Ok(Self {
            meta: CorpusMeta::from_store(&store),
            store,
            provider,
            index: index.map_err(ApiError::from),
            match_sets: Mutex::new(HashMap::new()),
        })
    }

    fn context<'a>(&'a self, settings: &'a Settings) -> Result<QueryContext<'a>, ApiError> {
        let index = self.index.as_ref().map_err(Clone::clone)?;
        Ok(QueryContext { corpus: &self.store, index, provider: self.provider.as_ref(), embed_config: &settings.embedding })
    }

    /// Match set of a focus book at `config.floor`, computed once per generation.
    fn match_set(&self, settings: &Settings, doc_id: &str, config: &MatchConfig) -> Result<Arc<MatchSet>, ApiError> {
        let key = (doc_id.to_string(), config.floor.to_bits());
        if let Some(set) = self.match_sets.lock().unwrap().get(&key) {
            return Ok(set.clone());
        }
        let doc = self.store.document(doc_id).ok_or_else(|| ApiError::not_found(format!("unknown book {doc_id:?}")))?;
        let ctx = self.context(settings)?;
        let set = Arc::new(query_book(&ctx, doc, config).map_err(|e| ApiError::from(CliError::from(e)))?);
        self.match_sets.lock().unwrap().insert(key, set.clone());
        Ok(set)
    }
}

pub struct AppState {
    settings: Settings,
    generation: RwLock<Arc<Generation>>,
    jobs: Mutex<JobTable>,
    /// Serializes mutating jobs; tokio's mutex grants the lock in FIFO order.
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(settings: Settings) -> Result<Arc<Self>, CliError> {
        let generation = Generation::load(&settings)?;
        Ok(Arc::new(Self {
            settings,
            generation: RwLock::new(Arc::new(generation)),
            jobs: Mutex::new(JobTable::default()),
            writer: tokio::sync::Mutex::new(()),
        }))
    }

    fn current(&self) -> Arc<Generation> {
        self.generation.read().unwrap().clone()
    }

    pub fn job(&self, id: &str) -> Option<JobDescriptor> {
        self.jobs.lock().unwrap().get(id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/books", get(list_books))
        .route("/books/{id}", get(get_book))
        .route("/books/{id}/timeline", get(get_timeline))
        .route("/books/{id}/disciplines", get(get_disciplines))
        .route("/books/{id}/alluvial", get(get_alluvial))
        .route("/sentences/{id}/matches", get(get_matches))
        .route("/jobs", get(list_jobs).post(post_job))
        .route("/jobs/{id}", get(get_job));
    let api = match &state.settings.serve.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("no such endpoint") }),
    };
    api.with_state(state)
}

pub async fn serve(settings: Settings) -> Result<(), CliError> {
    let addr: SocketAddr = format!("{}:{}", settings.serve.bind, settings.serve.port)
        .parse()
        .map_err(|_| CliError::Config(format!("invalid bind address {:?}", settings.serve.bind)))?;
    let state = tokio::task::spawn_blocking(move || AppState::new(settings))
        .await
        .expect("state loader panicked")?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::io(addr.to_string(), e))?;
    eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::io(addr.to_string(), e))?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::io(addr.to_string(), e))
}

/// Runs blocking work against the current generation.
async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Settings, &Generation) -> Result<T, ApiError> + Send + 'static,
{
    let state = state.clone();
    let generation = state.current();
    tokio::task::spawn_blocking(move || f(&state.settings, &generation))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

// ---------------------------------------------------------------------------
// Books

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookSummary {
    #[serde(flatten)]
    pub meta: DocumentMeta,
    pub sentence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookList {
    pub books: Vec<BookSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookDetail {
    pub book: BookSummary,
    pub sentences: Vec<SentenceRecord>,
}

fn summary(store: &CorpusStore, meta: &DocumentMeta) -> BookSummary {
    BookSummary { meta: meta.clone(), sentence_count: store.document_sentences(&meta.doc_id).map_or(0, |s| s.len()) }
}

async fn list_books(State(state): State<Arc<AppState>>) -> ApiResult<BookList> {
    let g = state.current();
    Ok(Json(BookList { books: g.store.metas().map(|m| summary(&g.store, m)).collect() }))
}

async fn get_book(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<BookDetail> {
    let g = state.current();
    let doc = g.store.document(&id).ok_or_else(|| ApiError::not_found(format!("unknown book {id:?}")))?;
    Ok(Json(BookDetail {
        book: summary(&g.store, &doc.meta),
        sentences: g.store.document_sentences(&id).unwrap_or_default().to_vec(),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsParams {
    pub floor: Option<f32>,
    pub statistic: Option<SimilarityStatistic>,
    pub min_matching_sentences: Option<usize>,
}

fn params<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(p)| p).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn match_config(settings: &Settings, floor: Option<f32>) -> Result<MatchConfig, ApiError> {
    let config = MatchConfig { floor: floor.unwrap_or(settings.matching.floor), ..settings.matching };
    config.validate().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, match_kind(&e), e.to_string()))?;
    Ok(config)
}

async fn book_analytics<T, F>(
    state: Arc<AppState>,
    id: String,
    q: Result<Query<AnalyticsParams>, QueryRejection>,
    f: F,
) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Settings, &Generation, &MatchSet, &AnalyticsParams) -> Result<T, ApiError> + Send + 'static,
{
    let p = params(q)?;
    let out = blocking(&state, move |settings, g| {
        let config = match_config(settings, p.floor)?;
        let set = g.match_set(settings, &id, &config)?;
        f(settings, g, &set, &p)
    })
    .await?;
    Ok(Json(out))
}

async fn get_timeline(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<AnalyticsParams>, QueryRejection>,
) -> ApiResult<InfluenceTimeline> {
    book_analytics(state, id, q, |settings, g, set, p| {
        let stat = p.statistic.unwrap_or(settings.report.statistic);
        build_timeline(set, &g.meta, set.focus_pub_year, stat).map_err(|e| ApiError::from(CliError::from(e)))
    })
    .await
}

async fn get_disciplines(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<AnalyticsParams>, QueryRejection>,
) -> ApiResult<Vec<DisciplineInfluence>> {
    book_analytics(state, id, q, |settings, g, set, p| {
        let min = p.min_matching_sentences.unwrap_or(settings.report.min_matching_sentences);
        Ok(discipline_table(set, &g.meta, set.focus_pub_year, min))
    })
    .await
}

async fn get_alluvial(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<AnalyticsParams>, QueryRejection>,
) -> ApiResult<Vec<AlluvialFlow>> {
    book_analytics(state, id, q, |_, _, set, _| Ok(alluvial_flows(set, set.focus_pub_year))).await
}

// ---------------------------------------------------------------------------
// Sentence matches

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchParams {
    pub floor: Option<f32>,
    pub tier: Option<String>,
}

/// Matches of one sentence, split at the publication year of its book.
/// Records from books published in the same year count as later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceMatches {
    pub sentence_id: String,
    pub doc_id: String,
    pub pub_year: i32,
    pub floor: f32,
    /// Lowest tier included; `None` means every tier above the floor.
    pub tier: Option<ConfidenceTier>,
    /// Hits before the per-sentence cap, when it applied.
    pub total_hits: Option<usize>,
    pub pre: Vec<MatchRecord>,
    pub post: Vec<MatchRecord>,
}

async fn get_matches(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<MatchParams>, QueryRejection>,
) -> ApiResult<SentenceMatches> {
    let p = params(q)?;
    let out = blocking(&state, move |settings, g| {
        let sentence = g.store.sentence(&id).ok_or_else(|| ApiError::not_found(format!("unknown sentence {id:?}")))?;
        let tier = match p.tier.as_deref() {
            None => None,
            Some(t) => Some(ConfidenceTier::parse(t).ok_or_else(|| ApiError::bad_request(format!("unknown tier {t:?}")))?),
        };
        let config = match_config(settings, p.floor)?;
        let ctx = g.context(settings)?;
        let (records, truncated) =
            ctx.query_sentence(sentence, &config).map_err(|e| ApiError::from(CliError::from(e)))?;
        let pub_year = g.store.document(&sentence.doc_id).map(|d| d.meta.pub_year).unwrap_or_default();
        let (mut pre, mut post) = (Vec::new(), Vec::new());
        for r in records.into_iter().filter(|r| tier.is_none_or(|t| r.tier >= t)) {
            match FlowDirection::of(r.corpus_pub_year, pub_year) {
                FlowDirection::Origin => pre.push(r),
                FlowDirection::Afterlife => post.push(r),
            }
        }
        Ok(SentenceMatches {
            sentence_id: sentence.sentence_id.clone(),
            doc_id: sentence.doc_id.clone(),
            pub_year,
            floor: config.floor,
            tier,
            total_hits: truncated.map(|t| t.total_hits),
            pre,
            post,
        })
    })
    .await?;
    Ok(Json(out))
}

// ---------------------------------------------------------------------------
// Jobs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobList {
    pub jobs: Vec<JobDescriptor>,
}

async fn list_jobs(State(state): State<Arc<AppState>>) -> Json<JobList> {
    Json(JobList { jobs: state.jobs.lock().unwrap().list() })
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<JobDescriptor> {
    state.job(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))
}

async fn post_job(
    State(state): State<Arc<AppState>>,
    body: Result<Json<JobRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<JobDescriptor>), ApiError> {
    let Json(request) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let job = state.jobs.lock().unwrap().submit(request.kind());
    let id = job.job_id.clone();
    let task_state = state.clone();
    tokio::spawn(async move { run_job(task_state, id, request).await });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn run_job(state: Arc<AppState>, id: String, request: JobRequest) {
    let mutating = request.kind().is_mutating();
    let _guard = if mutating { Some(state.writer.lock().await) } else { None };
    state.jobs.lock().unwrap().start(&id);
    let worker = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let value = request.run(&worker.settings)?;
        if mutating {
            let next = Generation::load(&worker.settings)?;
            *worker.generation.write().unwrap() = Arc::new(next);
        }
        Ok::<_, CliError>(value)
    })
    .await;
    let outcome = match outcome {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(format!("{}: {e}", e.kind())),
        Err(e) => Err(format!("job panicked: {e}")),
    };
    state.jobs.lock().unwrap().finish(&id, outcome);
}
