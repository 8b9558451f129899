//! Weighted combination of cosine and structural scores, run only on the
//! books that already pass the semantic influence threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_graph, smatch, AmrError, AmrGraph, Result, SmatchScore, DEFAULT_RESTARTS};
use crate::matching::{
    influenced_books, json_line, write_csv_with, ExportHeader, MatchRecord, MatchSet, DEFAULT_MIN_MATCHING_SENTENCES,
};

pub const ENSEMBLE_COLUMNS: [&str; 2] = ["structural_f1", "combined"];

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub semantic: f64,
    pub structural: f64,
}

impl Default for EnsembleWeights {
    fn default() -> Self {
        Self { semantic: 0.5, structural: 0.5 }
    }
}

impl EnsembleWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.semantic, self.structural].iter().all(|w| w.is_finite() && *w >= 0.0)
            && (self.semantic + self.structural - 1.0).abs() <= WEIGHT_TOLERANCE;
        if ok {
            Ok(())
        } else {
            Err(AmrError::InvalidWeights { semantic: self.semantic, structural: self.structural })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScore {
    pub cosine: f64,
    pub structural_f1: Option<f64>,
    pub combined: f64,
    pub weights: EnsembleWeights,
}

/// Weighted mean of the two arms; without a structural score the result is
/// the cosine itself.
pub fn ensemble(cosine: f64, structural: Option<&SmatchScore>, weights: EnsembleWeights) -> Result<EnsembleScore> {
    weights.validate()?;
    let structural_f1 = structural.map(|s| s.f1);
    let combined = match structural_f1 {
        Some(f1) => weights.semantic * cosine + weights.structural * f1,
        None => cosine,
    };
    Ok(EnsembleScore { cosine, structural_f1, combined, weights })
}

#[derive(Deserialize)]
struct SidecarLine {
    sentence_id: String,
    graph: String,
}

/// Pre-parsed graphs keyed by sentence id.
#[derive(Debug, Clone, Default)]
pub struct GraphStore {
    graphs: BTreeMap<String, AmrGraph>,
}

impl GraphStore {
    /// Reads a JSON-lines sidecar of `{"sentence_id", "graph"}` objects.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut store = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| AmrError::Sidecar { line: i + 1, message };
            let rec: SidecarLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let graph = parse_graph(&rec.graph).map_err(|e| err(e.to_string()))?;
            if store.graphs.insert(rec.sentence_id.clone(), graph).is_some() {
                return Err(err(format!("duplicate sentence id {:?}", rec.sentence_id)));
            }
        }
        Ok(store)
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::from_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn insert(&mut self, sentence_id: impl Into<String>, graph: AmrGraph) {
        self.graphs.insert(sentence_id.into(), graph);
    }

    pub fn get(&self, sentence_id: &str) -> Option<&AmrGraph> {
        self.graphs.get(sentence_id)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub weights: EnsembleWeights,
    pub min_matching_sentences: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            weights: EnsembleWeights::default(),
            min_matching_sentences: DEFAULT_MIN_MATCHING_SENTENCES,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    #[serde(flatten)]
    pub record: MatchRecord,
    pub structural_f1: Option<f64>,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub config: EnsembleConfig,
    pub influenced: BTreeSet<String>,
    /// One row per match record, in match-set order.
    pub rows: Vec<EnsembleRow>,
    pub pairs_scored: usize,
    /// Influenced-book pairs skipped because a graph was missing.
    pub pairs_missing_graph: usize,
}

/// Per-pair seed, so results do not depend on scheduling.
pub fn pair_seed(seed: u64, query_sentence_id: &str, corpus_sentence_id: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let bytes = seed
        .to_le_bytes()
        .into_iter()
        .chain(query_sentence_id.bytes())
        .chain([0xff])
        .chain(corpus_sentence_id.bytes());
    bytes.fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Scores structure only for records from influenced books; all other
/// records keep their cosine as the combined score.
pub fn run_staged(set: &MatchSet, graphs: &GraphStore, config: &EnsembleConfig) -> Result<EnsembleRun> {
    config.weights.validate()?;
    let influenced = influenced_books(set, config.min_matching_sentences);
    let scored: Vec<(Option<SmatchScore>, bool)> = set
        .records
        .par_iter()
        .map(|r| {
            if !influenced.contains(&r.corpus_doc_id) {
                return (None, false);
            }
            match (graphs.get(&r.query_sentence_id), graphs.get(&r.corpus_sentence_id)) {
                (Some(q), Some(c)) => {
                    let seed = pair_seed(config.seed, &r.query_sentence_id, &r.corpus_sentence_id);
                    (Some(smatch(q, c, config.restarts, seed)), false)
                }
                _ => (None, true),
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(scored.len());
    let (mut pairs_scored, mut pairs_missing_graph) = (0, 0);
    for (r, (s, missing)) in set.records.iter().zip(&scored) {
        pairs_scored += s.is_some() as usize;
        pairs_missing_graph += *missing as usize;
        let e = ensemble(r.score as f64, s.as_ref(), config.weights)?;
        rows.push(EnsembleRow { record: r.clone(), structural_f1: e.structural_f1, combined: e.combined });
    }
    Ok(EnsembleRun { config: config.clone(), influenced, rows, pairs_scored, pairs_missing_graph })
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Match-record CSV with `structural_f1` (blank when unscored) and
/// `combined` appended.
pub fn write_ensemble_csv<W: Write>(set: &MatchSet, run: &EnsembleRun, mut w: W) -> std::io::Result<()> {
    write_csv_with(
        set,
        &ENSEMBLE_COLUMNS,
        |i| vec![opt_field(run.rows[i].structural_f1), run.rows[i].combined.to_string()],
        &mut w,
    )
}

pub fn write_ensemble_jsonl<W: Write>(set: &MatchSet, run: &EnsembleRun, mut w: W) -> std::io::Result<()> {
    json_line(&mut w, &serde_json::json!({ "header": ExportHeader::for_set(set, &ENSEMBLE_COLUMNS) }))?;
    for row in &run.rows {
        json_line(&mut w, row)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{classify_tier, ConfidenceTier, MatchConfig};
    use crate::vindex::Manifest;

    fn score(f1: f64) -> SmatchScore {
        SmatchScore { precision: f1, recall: f1, f1, matched_triples: 0, alignment: vec![] }
    }

    #[test]
    fn weighted_mean_examples() {
        let e = ensemble(0.9, Some(&score(0.5)), EnsembleWeights::default()).unwrap();
        assert!((e.combined - 0.7).abs() < 1e-12);
        assert_eq!(ensemble(0.9, None, EnsembleWeights::default()).unwrap().combined, 0.9);
        let sem_only = EnsembleWeights { semantic: 1.0, structural: 0.0 };
        assert_eq!(ensemble(0.9, Some(&score(0.1)), sem_only).unwrap().combined, 0.9);
    }

    #[test]
    fn invalid_weights_rejected() {
        for (a, b) in [(0.6, 0.6), (-0.5, 1.5), (f64::NAN, 0.5)] {
            let w = EnsembleWeights { semantic: a, structural: b };
            assert!(matches!(ensemble(0.9, None, w), Err(AmrError::InvalidWeights { .. })));
        }
    }

    fn rec(q: usize, doc: &str, s: usize, score: f32) -> MatchRecord {
        MatchRecord {
            query_sentence_id: format!("focus#{q}"),
            corpus_sentence_id: format!("{doc}#{s}"),
            score,
            tier: classify_tier(score).unwrap_or(ConfidenceTier::Speculative),
            query_doc_id: "focus".into(),
            corpus_doc_id: doc.into(),
            corpus_pub_year: 1870,
            corpus_disciplines: vec![],
        }
    }

    fn fixture() -> (MatchSet, GraphStore) {
        let mut records: Vec<MatchRecord> = (0..6).map(|i| rec(i, "big", i, 0.96)).collect();
        records.push(rec(0, "small", 0, 0.9));
        let set = MatchSet::from_records("focus".into(), 1859, MatchConfig::default(), Manifest::now("m", "h"), 6, records, vec![]);
        let mut lines = String::new();
        for i in 0..6 {
            let g = "(w / want-01 :ARG0 (b / boy))";
            lines.push_str(&format!("{{\"sentence_id\":\"focus#{i}\",\"graph\":\"{g}\"}}\n"));
            if i < 5 {
                let h = if i % 2 == 0 { g } else { "(x / see-01 :mod (y / girl))" };
                lines.push_str(&format!("{{\"sentence_id\":\"big#{i}\",\"graph\":\"{h}\"}}\n"));
            }
        }
        lines.push_str("{\"sentence_id\":\"small#0\",\"graph\":\"(w / want-01)\"}\n");
        (set, GraphStore::from_jsonl(lines.as_bytes()).unwrap())
    }

    #[test]
    fn staging_limits_structural_scoring() {
        let (set, graphs) = fixture();
        let run = run_staged(&set, &graphs, &EnsembleConfig::default()).unwrap();
        assert_eq!(run.influenced, BTreeSet::from(["big".to_string()]));
        assert_eq!((run.pairs_scored, run.pairs_missing_graph), (5, 1));
        assert_eq!(run.rows[0].structural_f1, Some(1.0));
        assert!((run.rows[0].combined - (0.5 * 0.96f32 as f64 + 0.5)).abs() < 1e-12);
        assert_eq!(run.rows[1].structural_f1, Some(0.0));
        // The small book is below the threshold and keeps its cosine.
        assert_eq!(run.rows[6].structural_f1, None);
        assert_eq!(run.rows[6].combined, 0.9f32 as f64);
        assert_eq!(run, run_staged(&set, &graphs, &EnsembleConfig::default()).unwrap());
    }

    #[test]
    fn exports_append_columns() {
        let (set, graphs) = fixture();
        let run = run_staged(&set, &graphs, &EnsembleConfig::default()).unwrap();
        let mut csv = Vec::new();
        write_ensemble_csv(&set, &run, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let header = text.lines().nth(1).unwrap();
        assert!(header.ends_with(",structural_f1,combined"));
        assert!(text.lines().last().unwrap().ends_with(",,0.8999999761581421"));
        let mut jsonl = Vec::new();
        write_ensemble_jsonl(&set, &run, &mut jsonl).unwrap();
        let rows: Vec<EnsembleRow> =
            String::from_utf8(jsonl).unwrap().lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows, run.rows);
    }

    #[test]
    fn sidecar_errors_name_the_line() {
        let bad = "{\"sentence_id\":\"a#0\",\"graph\":\"(a / x)\"}\n{\"sentence_id\":\"a#1\",\"graph\":\"(a / x\"}\n";
        assert!(matches!(GraphStore::from_jsonl(bad.as_bytes()), Err(AmrError::Sidecar { line: 2, .. })));
    }

    #[test]
    fn pair_seeds_differ_by_pair() {
        assert_ne!(pair_seed(1, "a#0", "b#0"), pair_seed(1, "a#0", "b#1"));
        assert_ne!(pair_seed(1, "a#0", "b#0"), pair_seed(2, "a#0", "b#0"));
        assert_ne!(pair_seed(1, "a#01", "b#0"), pair_seed(1, "a#0", "1b#0"));
    }
}
