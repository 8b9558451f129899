//! Configuration file, environment overrides and path resolution.

use std::path::{Path, PathBuf};

use lineage_core::amr::{EnsembleConfig, EnsembleWeights, DEFAULT_RESTARTS};
use lineage_core::analytics::SimilarityStatistic;
use lineage_core::corpus::CorpusConfig;
use lineage_core::embed::EmbeddingProviderConfig;
use lineage_core::matching::{MatchConfig, DEFAULT_MIN_MATCHING_SENTENCES};
use lineage_core::pipeline::ReportConfig;
use lineage_core::vindex::{IndexSpec, IvfParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_CONFIG_FILE: &str = "lineage.toml";
pub const ENV_CONFIG: &str = "LINEAGE_CONFIG";
pub const ENV_ENDPOINT: &str = "LINEAGE_ENDPOINT";
pub const ENV_PORT: &str = "LINEAGE_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    #[default]
    Flat,
    Ivf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSettings {
    pub mode: IndexKind,
    pub n_lists: usize,
    pub n_probe: usize,
    pub seed: u64,
}

impl Default for IndexSettings {
    fn default() -> Self {
        let p = IvfParams::default();
        Self { mode: IndexKind::Flat, n_lists: p.n_lists, n_probe: p.n_probe, seed: p.seed }
    }
}

impl IndexSettings {
    pub fn spec(&self) -> IndexSpec {
        match self.mode {
            IndexKind::Flat => IndexSpec::Flat,
            IndexKind::Ivf => IndexSpec::Ivf(IvfParams { n_lists: self.n_lists, n_probe: self.n_probe, seed: self.seed }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub statistic: SimilarityStatistic,
    pub min_matching_sentences: usize,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { statistic: SimilarityStatistic::Mean, min_matching_sentences: DEFAULT_MIN_MATCHING_SENTENCES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub semantic_weight: f64,
    pub structural_weight: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        let w = EnsembleWeights::default();
        Self { semantic_weight: w.semantic, structural_weight: w.structural, restarts: DEFAULT_RESTARTS, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub bind: String,
    pub port: u16,
    /// Directory of static UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: DEFAULT_PORT, static_dir: None }
    }
}

/// Everything the CLI and the service need. Relative paths in a config file
/// are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub corpus_dir: PathBuf,
    pub embeddings_path: PathBuf,
    pub index_path: PathBuf,
    /// Used when `ingest` creates a new corpus store.
    pub corpus: CorpusConfig,
    pub embedding: EmbeddingProviderConfig,
    pub index: IndexSettings,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub report: ReportSettings,
    pub ensemble: EnsembleSettings,
    pub serve: ServeSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            embeddings_path: "embeddings.lngidx".into(),
            index_path: "index.lngidx".into(),
            corpus: CorpusConfig::default(),
            embedding: EmbeddingProviderConfig::default(),
            index: IndexSettings::default(),
            matching: MatchConfig::default(),
            report: ReportSettings::default(),
            ensemble: EnsembleSettings::default(),
            serve: ServeSettings::default(),
        }
    }
}

impl Settings {
    pub fn from_toml(s: &str, base: &Path) -> Result<Self, CliError> {
        let mut settings: Self = toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        settings.resolve_paths(base);
        Ok(settings)
    }

    /// Loads `path`, or the default file in the working directory if it
    /// exists, or the built-in defaults. An explicit path must exist.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let (path, required) = match path {
            Some(p) => (p.to_path_buf(), true),
            None => (PathBuf::from(DEFAULT_CONFIG_FILE), false),
        };
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Self::from_toml(&text, &base)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
            Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.corpus_dir, &mut self.embeddings_path, &mut self.index_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.serve.static_dir {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Applies `LINEAGE_ENDPOINT` and `LINEAGE_PORT` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        if let Some(endpoint) = lookup(ENV_ENDPOINT).filter(|s| !s.is_empty()) {
            self.embedding.endpoint = Some(endpoint);
        }
        if let Some(port) = lookup(ENV_PORT).filter(|s| !s.is_empty()) {
            self.serve.port = port
                .parse()
                .map_err(|_| CliError::Config(format!("{ENV_PORT}={port:?} is not a port number")))?;
        }
        Ok(())
    }

    pub fn report_config(&self) -> ReportConfig {
        ReportConfig {
            match_config: self.matching,
            statistic: self.report.statistic,
            min_matching_sentences: self.report.min_matching_sentences,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            weights: EnsembleWeights {
                semantic: self.ensemble.semantic_weight,
                structural: self.ensemble.structural_weight,
            },
            min_matching_sentences: self.report.min_matching_sentences,
            restarts: self.ensemble.restarts,
            seed: self.ensemble.seed,
        }
    }
}
