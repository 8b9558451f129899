#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lineage_cli::{commands, Settings};

pub const SEED: u64 = 1;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

/// Settings with every path inside `root`.
pub fn settings(root: &Path) -> Settings {
    Settings {
        corpus_dir: root.join("corpus"),
        embeddings_path: root.join("embeddings.lngidx"),
        index_path: root.join("index.lngidx"),
        ..Settings::default()
    }
}

/// Writes and ingests the planted demonstration corpus.
pub fn ingest_planted(settings: &Settings, root: &Path) -> commands::SynthSummary {
    let input = root.join("planted.jsonl");
    let summary = commands::synth(SEED, &input).unwrap();
    commands::ingest(settings, &input).unwrap();
    summary
}
