//! End-to-end runs over the planted synthetic corpus: persistence, index
//! modes and the frozen report bundle.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use lineage_core::analytics::{ReportBundle, ReportFormat, REPORT_JSON};
use lineage_core::corpus::{CorpusConfig, CorpusStore};
use lineage_core::embed::{EmbeddingProviderConfig, HashEmbedder};
use lineage_core::matching::{query_book_by_id, read_jsonl, write_jsonl, ConfidenceTier, MatchConfig, QueryContext};
use lineage_core::pipeline::{build_corpus_index, run_report, store_from_records, ReportConfig};
use lineage_core::synth::{generate, planted_spec, SynthCorpus};
use lineage_core::vindex::{IndexSpec, IvfParams, VectorIndex};

const DIM: usize = 384;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn corpus() -> SynthCorpus {
    generate(&planted_spec(1))
}

fn report(store: &CorpusStore, spec: IndexSpec) -> ReportBundle {
    let cfg = EmbeddingProviderConfig::hash(DIM);
    let provider = HashEmbedder::new(DIM);
    let index = build_corpus_index(store, &provider, &cfg, spec).unwrap();
    let ctx = QueryContext::new(store, &index, &provider, &cfg).unwrap();
    run_report(&ctx, "focus", &ReportConfig::default(), ReportFormat::Bundle).unwrap().bundle
}

/// Set `LINEAGE_BLESS=1` to rewrite the golden files after an intended change.
#[test]
fn report_bundle_matches_golden() {
    let synth = corpus();
    let store = store_from_records(synth.records, CorpusConfig::default()).unwrap();
    let bundle = report(&store, IndexSpec::Flat);
    let dir = golden_dir();
    if std::env::var_os("LINEAGE_BLESS").is_some() {
        bundle.write_to(&dir).unwrap();
    }
    for (name, bytes) in &bundle.files {
        let golden = fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(golden == *bytes, "{name} differs from golden");
    }
    let json: serde_json::Value = serde_json::from_slice(bundle.get(REPORT_JSON).unwrap()).unwrap();
    assert_eq!(json["summary"]["total_matches"], 12.0);
}

#[test]
fn on_disk_store_and_index_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = corpus();
    let corpus_dir = tmp.path().join("corpus");
    {
        let mut store = CorpusStore::create(&corpus_dir, CorpusConfig::default()).unwrap();
        store.ingest_jsonl(synth.to_jsonl().as_bytes()).unwrap();
    }
    let store = CorpusStore::open(&corpus_dir).unwrap();
    let in_memory = store_from_records(synth.records.clone(), CorpusConfig::default()).unwrap();
    assert_eq!(store.corpus_hash(), in_memory.corpus_hash());

    let cfg = EmbeddingProviderConfig::hash(DIM);
    let provider = HashEmbedder::new(DIM);
    let index = build_corpus_index(&store, &provider, &cfg, IndexSpec::Flat).unwrap();
    let path = tmp.path().join("index.lngidx");
    index.save(&path).unwrap();
    let loaded = VectorIndex::load(&path).unwrap();
    assert!(loaded.is_memory_mapped() || loaded.len() == index.len());

    let ctx = QueryContext::new(&store, &loaded, &provider, &cfg).unwrap();
    let set = query_book_by_id(&ctx, "focus", &MatchConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&set, &mut buf).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), set);

    // The on-disk run reproduces the in-memory golden bundle.
    assert_eq!(report(&store, IndexSpec::Flat), report(&in_memory, IndexSpec::Flat));
}

#[test]
fn ivf_finds_every_plant() {
    let synth = corpus();
    let plants: BTreeSet<(String, String)> =
        synth.plants.iter().map(|p| (p.focus_sentence_id.clone(), p.corpus_sentence_id.clone())).collect();
    let store = store_from_records(synth.records, CorpusConfig::default()).unwrap();
    let cfg = EmbeddingProviderConfig::hash(DIM);
    let provider = HashEmbedder::new(DIM);
    let spec = IndexSpec::Ivf(IvfParams { n_lists: 32, n_probe: 2, seed: 3 });
    let index = build_corpus_index(&store, &provider, &cfg, spec).unwrap();
    let ctx = QueryContext::new(&store, &index, &provider, &cfg).unwrap();
    let set = query_book_by_id(&ctx, "focus", &MatchConfig::default()).unwrap();
    let direct: BTreeSet<(String, String)> = set
        .records
        .iter()
        .filter(|r| r.tier == ConfidenceTier::Direct)
        .map(|r| (r.query_sentence_id.clone(), r.corpus_sentence_id.clone()))
        .collect();
    assert_eq!(direct, plants);
}
