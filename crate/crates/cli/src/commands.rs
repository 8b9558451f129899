//! Pipeline stages shared by the CLI subcommands and the service's jobs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lineage_core::amr::{run_staged, write_ensemble_csv, write_ensemble_jsonl, EnsembleRun, GraphStore};
use lineage_core::analytics::ReportFormat;
use lineage_core::corpus::{CorpusStore, CONFIG_FILE};
use lineage_core::embed::EmbeddingProvider;
use lineage_core::matching::{query_book_by_id, write_csv, write_jsonl, MatchError, MatchSet, QueryContext};
use lineage_core::pipeline::{embed_corpus, index_embeddings, run_report, ReportOutput};
use lineage_core::synth::{generate, planted_spec, Plant};
use lineage_core::vindex::{IndexInfo, IndexSpec, VectorIndex};
use serde::Serialize;

use crate::error::CliError;
use crate::settings::Settings;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ExportFormat {
    #[default]
    Jsonl,
    Csv,
}

pub fn open_store(settings: &Settings) -> Result<CorpusStore> {
    if !settings.corpus_dir.join(CONFIG_FILE).exists() {
        return Err(CliError::NotFound(format!(
            "no corpus store at {}; run `lineage ingest` first",
            settings.corpus_dir.display()
        )));
    }
    Ok(CorpusStore::open(&settings.corpus_dir)?)
}

/// Loads the index at `path`; a missing file is `IndexNotBuilt`.
pub fn load_index(path: &Path) -> Result<VectorIndex> {
    if !path.exists() {
        return Err(CliError::IndexNotBuilt(format!("{} does not exist; run `lineage index build`", path.display())));
    }
    Ok(VectorIndex::load(path)?)
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers holding the previous file mapped never see a partial write.
fn save_atomically(index: &VectorIndex, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    index.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub corpus_dir: PathBuf,
    pub documents_added: usize,
    pub documents_total: usize,
    pub sentences_total: usize,
    pub corpus_hash: String,
}

/// Appends a JSON-lines corpus file to the store, creating the store if
/// needed. Documents before a failing line stay ingested.
pub fn ingest(settings: &Settings, input: &Path) -> Result<IngestSummary> {
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let mut store = CorpusStore::open_or_create(&settings.corpus_dir, settings.corpus.clone())?;
    let documents_added = store.ingest_jsonl(BufReader::new(file))?;
    Ok(IngestSummary {
        corpus_dir: settings.corpus_dir.clone(),
        documents_added,
        documents_total: store.documents().len(),
        sentences_total: store.sentences().len(),
        corpus_hash: store.corpus_hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedSummary {
    pub model: String,
    pub dimension: usize,
    pub sentences: usize,
    pub embeddings_path: PathBuf,
}

/// Embeds every filtered sentence and stores the vectors as a flat index.
pub fn embed(settings: &Settings) -> Result<EmbedSummary> {
    let store = open_store(settings)?;
    let provider = settings.embedding.build_provider()?;
    let model = provider.model_id()?;
    let vectors = embed_corpus(&store, provider.as_ref(), &settings.embedding)?;
    let index = index_embeddings(&store, &vectors, &model, IndexSpec::Flat)?;
    save_atomically(&index, &settings.embeddings_path)?;
    Ok(EmbedSummary {
        model,
        dimension: provider.dimension(),
        sentences: vectors.len(),
        embeddings_path: settings.embeddings_path.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildSummary {
    pub index_path: PathBuf,
    /// False when no embeddings file existed and the corpus was embedded
    /// on the fly.
    pub reused_embeddings: bool,
    pub info: IndexInfo,
}

/// Builds the search index from stored embeddings, or embeds first when
/// there are none. Stale embeddings are an error.
pub fn build_index(settings: &Settings) -> Result<BuildSummary> {
    let store = open_store(settings)?;
    let provider = settings.embedding.build_provider()?;
    let reused = settings.embeddings_path.exists();
    let source = if reused {
        let embeddings = VectorIndex::load(&settings.embeddings_path)?;
        // Same consistency check a query performs against the final index.
        QueryContext::new(&store, &embeddings, provider.as_ref(), &settings.embedding)?;
        embeddings
    } else {
        let vectors = embed_corpus(&store, provider.as_ref(), &settings.embedding)?;
        index_embeddings(&store, &vectors, &provider.model_id()?, IndexSpec::Flat)?
    };
    let index = source.rebuild(settings.index.spec())?;
    save_atomically(&index, &settings.index_path)?;
    Ok(BuildSummary { index_path: settings.index_path.clone(), reused_embeddings: reused, info: index.info() })
}

pub fn index_info(settings: &Settings) -> Result<IndexInfo> {
    Ok(load_index(&settings.index_path)?.info())
}

/// Corpus, index and provider, loaded together for querying.
pub struct Loaded {
    pub store: CorpusStore,
    pub index: VectorIndex,
    pub provider: Box<dyn EmbeddingProvider>,
}

impl Loaded {
    pub fn open(settings: &Settings) -> Result<Self> {
        let store = open_store(settings)?;
        let index = load_index(&settings.index_path)?;
        let provider = settings.embedding.build_provider()?;
        Ok(Self { store, index, provider })
    }

    pub fn context<'a>(&'a self, settings: &'a Settings) -> Result<QueryContext<'a>> {
        Ok(QueryContext::new(&self.store, &self.index, self.provider.as_ref(), &settings.embedding)?)
    }
}

fn known_focus(store: &CorpusStore, doc_id: &str) -> Result<()> {
    match store.document(doc_id) {
        Some(_) => Ok(()),
        None => Err(MatchError::UnknownDocument(doc_id.to_string()).into()),
    }
}

pub fn query(settings: &Settings, focus_doc_id: &str) -> Result<MatchSet> {
    let loaded = Loaded::open(settings)?;
    known_focus(&loaded.store, focus_doc_id)?;
    let ctx = loaded.context(settings)?;
    Ok(query_book_by_id(&ctx, focus_doc_id, &settings.matching)?)
}

pub fn report(settings: &Settings, focus_doc_id: &str, format: ReportFormat) -> Result<ReportOutput> {
    let loaded = Loaded::open(settings)?;
    known_focus(&loaded.store, focus_doc_id)?;
    let ctx = loaded.context(settings)?;
    Ok(run_report(&ctx, focus_doc_id, &settings.report_config(), format)?)
}

pub fn ensemble(settings: &Settings, focus_doc_id: &str, graphs: &Path) -> Result<(MatchSet, EnsembleRun)> {
    let graphs = GraphStore::open(graphs)?;
    let set = query(settings, focus_doc_id)?;
    let run = run_staged(&set, &graphs, &settings.ensemble_config())?;
    Ok((set, run))
}

/// Opens `out` for writing, or stdout when it is `None`.
pub fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn finish(w: &mut dyn Write, res: std::io::Result<()>, out: Option<&Path>) -> Result<()> {
    let label = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    res.and_then(|_| w.flush()).map_err(|e| CliError::io(label, e))
}

pub fn write_matches(set: &MatchSet, format: ExportFormat, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    let res = match format {
        ExportFormat::Jsonl => write_jsonl(set, &mut w),
        ExportFormat::Csv => write_csv(set, &mut w),
    };
    finish(&mut w, res, out)
}

pub fn write_ensemble(set: &MatchSet, run: &EnsembleRun, format: ExportFormat, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    let res = match format {
        ExportFormat::Jsonl => write_ensemble_jsonl(set, run, &mut w),
        ExportFormat::Csv => write_ensemble_csv(set, run, &mut w),
    };
    finish(&mut w, res, out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthSummary {
    pub documents: usize,
    pub distractor_sentences: usize,
    pub plants: Vec<Plant>,
}

/// Writes the planted demonstration corpus as JSON lines.
pub fn synth(seed: u64, out: &Path) -> Result<SynthSummary> {
    let corpus = generate(&planted_spec(seed));
    std::fs::write(out, corpus.to_jsonl()).map_err(|e| CliError::io(out, e))?;
    Ok(SynthSummary {
        documents: corpus.records.len(),
        distractor_sentences: corpus.distractor_sentences,
        plants: corpus.plants,
    })
}
