//! Cosine-similarity index over unit-norm sentence vectors.
//!
//! Two modes share one row-major `f32` matrix:
//!
//! * `FlatExact` scans every row.
//! * `IvfApprox` partitions rows into `n_lists` spherical k-means cells and
//!   scans only the `n_probe` cells whose centroids score highest. Probing
//!   every cell degenerates to exact search.
//!
//! Hits are ordered by descending score, ties by ascending sentence id.

mod format;
mod kmeans;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::path::Path;
use std::sync::Arc;

use memmap2::Mmap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;

pub use format::{load_index, save_index, FORMAT_VERSION, MAGIC};
pub use kmeans::{train_centroids, KMEANS_ITERATIONS};

/// Tolerance on the norm of every stored row.
pub const ROW_NORM_TOLERANCE: f64 = 1e-4;

/// Slack applied to `range_search` thresholds so that a vector's score
/// against itself (which may round to just below 1.0 in `f32`) still clears
/// a threshold of exactly 1.0.
pub const SCORE_EPSILON: f32 = 1e-6;

/// Rows scanned per block in the multi-query kernel.
const ROW_BLOCK: usize = 512;
/// Queries sharing one pass over a row block.
const QUERY_BLOCK: usize = 8;

#[derive(Debug, Error)]
pub enum VindexError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot build an index from zero vectors")]
    EmptyInput,
    #[error("ivf training needs at least n_lists={n_lists} vectors, got {n}")]
    InsufficientTrainingData { n: usize, n_lists: usize },
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
    #[error("row {row} ({id:?}) has norm {norm}, expected 1 ± {ROW_NORM_TOLERANCE}")]
    NotUnitNorm { row: usize, id: String, norm: f64 },
    #[error("duplicate sentence id {0:?}")]
    DuplicateId(String),
    #[error("threshold {0} outside [-1, 1]")]
    InvalidThreshold(f32),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index file layout version {found} cannot be read by this reader (version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index file checksum mismatch (truncated or corrupted)")]
    ChecksumMismatch,
    #[error("not an index file (bad magic bytes)")]
    BadMagic,
    #[error("malformed index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VindexError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    FlatExact,
    IvfApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvfParams {
    pub n_lists: usize,
    pub n_probe: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        Self { n_lists: 64, n_probe: 8, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexSpec {
    #[default]
    Flat,
    Ivf(IvfParams),
}

/// Provenance stored alongside the vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub corpus_hash: String,
    pub built_at_unix: u64,
}

impl Manifest {
    pub fn now(model: impl Into<String>, corpus_hash: impl Into<String>) -> Self {
        let built_at_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self { model: model.into(), corpus_hash: corpus_hash.into(), built_at_unix }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub sentence_id: String,
    pub score: f32,
}

/// Inverted lists produced by k-means.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct IvfLists {
    pub params: IvfParams,
    /// `n_lists × dim`, unit-norm rows.
    pub centroids: Vec<f32>,
    /// Ascending row indices per list.
    pub lists: Vec<Vec<u32>>,
}

#[derive(Debug)]
enum Rows {
    Owned(Vec<f32>),
    Mapped { map: Arc<Mmap>, offset: usize, len: usize },
}

impl Rows {
    fn as_slice(&self) -> &[f32] {
        match self {
            Rows::Owned(v) => v,
            Rows::Mapped { map, offset, len } => {
                bytemuck::cast_slice(&map[*offset..*offset + len * std::mem::size_of::<f32>()])
            }
        }
    }
}

#[derive(Debug)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    /// Position of each row's id in ascending id order; breaks score ties.
    rank: Vec<u32>,
    rows: Rows,
    ivf: Option<IvfLists>,
    manifest: Manifest,
}

/// Plain-data summary used by `index info`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexInfo {
    pub dimension: usize,
    pub count: usize,
    pub mode: IndexMode,
    pub ivf: Option<IvfParams>,
    pub manifest: Manifest,
    pub format_version: u32,
}

/// Dot product with eight independent accumulators (vectorizes cleanly).
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0f32; 8];
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn clamp_score(s: f32) -> f32 {
    s.clamp(-1.0, 1.0)
}

/// Heap entry; `Ord` puts the *worse* candidate on top so the heap evicts it.
#[derive(Clone, Copy)]
struct Candidate {
    score: f32,
    rank: u32,
    row: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then(self.rank.cmp(&other.rank))
    }
}

fn ranks(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut rank = vec![0u32; ids.len()];
    for (r, &row) in order.iter().enumerate() {
        rank[row as usize] = r as u32;
    }
    rank
}

fn validate_rows(ids: &[String], matrix: &[f32], dim: usize) -> Result<()> {
    let bad = matrix.par_chunks(dim).enumerate().find_first(|(_, row)| {
        let n = crate::embed::l2_norm(row);
        !n.is_finite() || (n - 1.0).abs() > ROW_NORM_TOLERANCE
    });
    if let Some((row, r)) = bad {
        return Err(VindexError::NotUnitNorm { row, id: ids[row].clone(), norm: crate::embed::l2_norm(r) });
    }
    Ok(())
}

/// Builds an index from embedding vectors.
pub fn build_index(vectors: &[EmbeddingVector], spec: IndexSpec, manifest: Manifest) -> Result<VectorIndex> {
    let first = vectors.first().ok_or(VindexError::EmptyInput)?;
    let dim = first.dimension();
    let mut ids = Vec::with_capacity(vectors.len());
    let mut matrix = Vec::with_capacity(vectors.len() * dim);
    for v in vectors {
        if v.dimension() != dim {
            return Err(VindexError::DimensionMismatch { expected: dim, found: v.dimension() });
        }
        ids.push(v.sentence_id().to_string());
        matrix.extend_from_slice(v.values());
    }
    VectorIndex::from_parts(dim, ids, matrix, spec, manifest)
}

impl VectorIndex {
    /// Builds from a pre-assembled row-major matrix without copying it.
    pub fn from_parts(
        dim: usize,
        ids: Vec<String>,
        matrix: Vec<f32>,
        spec: IndexSpec,
        manifest: Manifest,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(VindexError::EmptyInput);
        }
        if dim == 0 {
            return Err(VindexError::InvalidParams("dimension must be > 0".into()));
        }
        if matrix.len() != ids.len() * dim {
            return Err(VindexError::DimensionMismatch { expected: ids.len() * dim, found: matrix.len() });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(VindexError::DuplicateId(dup.clone()));
        }
        validate_rows(&ids, &matrix, dim)?;
        let ivf = match spec {
            IndexSpec::Flat => None,
            IndexSpec::Ivf(params) => {
                if params.n_lists == 0 || params.n_probe == 0 || params.n_probe > params.n_lists {
                    return Err(VindexError::InvalidParams(format!(
                        "need 1 <= n_probe ({}) <= n_lists ({})",
                        params.n_probe, params.n_lists
                    )));
                }
                if ids.len() < params.n_lists {
                    return Err(VindexError::InsufficientTrainingData { n: ids.len(), n_lists: params.n_lists });
                }
                let centroids = train_centroids(&matrix, dim, params.n_lists, params.seed);
                let lists = kmeans::assign_lists(&matrix, dim, &centroids);
                Some(IvfLists { params, centroids, lists })
            }
        };
        let rank = ranks(&ids);
        Ok(Self { dim, ids, rank, rows: Rows::Owned(matrix), ivf, manifest })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn mode(&self) -> IndexMode {
        if self.ivf.is_some() {
            IndexMode::IvfApprox
        } else {
            IndexMode::FlatExact
        }
    }

    pub fn ivf_params(&self) -> Option<IvfParams> {
        self.ivf.as_ref().map(|l| l.params)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &[f32] {
        self.rows.as_slice()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix()[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_memory_mapped(&self) -> bool {
        matches!(self.rows, Rows::Mapped { .. })
    }

    pub fn info(&self) -> IndexInfo {
        IndexInfo {
            dimension: self.dim,
            count: self.len(),
            mode: self.mode(),
            ivf: self.ivf_params(),
            manifest: self.manifest.clone(),
            format_version: FORMAT_VERSION,
        }
    }

    /// Changes how many inverted lists a query scans. No-op for flat indexes.
    pub fn set_n_probe(&mut self, n_probe: usize) -> Result<()> {
        if let Some(ivf) = &mut self.ivf {
            if n_probe == 0 || n_probe > ivf.params.n_lists {
                return Err(VindexError::InvalidParams(format!("n_probe {n_probe} out of range")));
            }
            ivf.params.n_probe = n_probe;
        }
        Ok(())
    }

    /// Copies an index's rows into a new index built with `spec`, keeping ids and manifest.
    pub fn rebuild(&self, spec: IndexSpec) -> Result<Self> {
        Self::from_parts(self.dim, self.ids.clone(), self.matrix().to_vec(), spec, self.manifest.clone())
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim {
            return Err(VindexError::DimensionMismatch { expected: self.dim, found: query.len() });
        }
        Ok(())
    }

    /// Rows the query should scan: all rows, or the members of the probed lists.
    fn candidate_rows(&self, query: &[f32]) -> Option<Vec<u32>> {
        let ivf = self.ivf.as_ref()?;
        if ivf.params.n_probe >= ivf.lists.len() {
            return None;
        }
        let mut scored: Vec<(f32, usize)> = ivf
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, c)| (dot(query, c), i))
            .collect();
        scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut rows: Vec<u32> = scored[..ivf.params.n_probe]
            .iter()
            .flat_map(|&(_, l)| ivf.lists[l].iter().copied())
            .collect();
        rows.sort_unstable();
        Some(rows)
    }

    fn hits_from(&self, mut cands: Vec<Candidate>) -> Vec<SearchHit> {
        cands.sort_unstable_by(|a, b| b.score.total_cmp(&a.score).then(a.rank.cmp(&b.rank)));
        cands
            .into_iter()
            .map(|c| SearchHit { sentence_id: self.ids[c.row as usize].clone(), score: c.score })
            .collect()
    }

    fn scan<F: FnMut(u32, f32)>(&self, query: &[f32], mut visit: F) {
        let m = self.matrix();
        match self.candidate_rows(query) {
            None => {
                for (r, row) in m.chunks_exact(self.dim).enumerate() {
                    visit(r as u32, clamp_score(dot(query, row)));
                }
            }
            Some(rows) => {
                for r in rows {
                    let s = r as usize * self.dim;
                    visit(r, clamp_score(dot(query, &m[s..s + self.dim])));
                }
            }
        }
    }

    /// The `k` highest-scoring rows (all rows if fewer than `k`).
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.check_query(query)?;
        if k == 0 {
            return Err(VindexError::InvalidK);
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.scan(query, |row, score| {
            let c = Candidate { score, rank: self.rank[row as usize], row };
            if heap.len() < k {
                heap.push(c);
            } else if let Some(worst) = heap.peek() {
                if c < *worst {
                    heap.pop();
                    heap.push(c);
                }
            }
        });
        Ok(self.hits_from(heap.into_vec()))
    }

    /// Every row scoring at least `threshold` (less [`SCORE_EPSILON`]).
    ///
    /// In `IvfApprox` mode only probed lists are scanned, so the result is a
    /// subset of the exact answer.
    pub fn range_search(&self, query: &[f32], threshold: f32) -> Result<Vec<SearchHit>> {
        self.check_query(query)?;
        check_threshold(threshold)?;
        let cut = threshold - SCORE_EPSILON;
        let mut out = Vec::new();
        self.scan(query, |row, score| {
            if score >= cut {
                out.push(Candidate { score, rank: self.rank[row as usize], row });
            }
        });
        Ok(self.hits_from(out))
    }

    /// `top_k` for many queries, in parallel; results match serial calls.
    pub fn top_k_many(&self, queries: &[&[f32]], k: usize) -> Result<Vec<Vec<SearchHit>>> {
        queries.par_iter().map(|q| self.top_k(q, k)).collect()
    }

    /// `range_search` for many queries.
    ///
    /// Flat indexes use a blocked kernel: each block of rows is loaded once
    /// and scored against a group of queries, then groups run in parallel.
    pub fn range_search_many(&self, queries: &[&[f32]], threshold: f32) -> Result<Vec<Vec<SearchHit>>> {
        check_threshold(threshold)?;
        for q in queries {
            self.check_query(q)?;
        }
        if self.ivf.is_some() {
            return queries.par_iter().map(|q| self.range_search(q, threshold)).collect();
        }
        let cut = threshold - SCORE_EPSILON;
        let m = self.matrix();
        let dim = self.dim;
        let groups: Vec<Vec<Vec<SearchHit>>> = queries
            .par_chunks(QUERY_BLOCK)
            .map(|group| {
                let mut found: Vec<Vec<Candidate>> = vec![Vec::new(); group.len()];
                for (b, block) in m.chunks(ROW_BLOCK * dim).enumerate() {
                    let base = b * ROW_BLOCK;
                    for (qi, q) in group.iter().enumerate() {
                        for (r, row) in block.chunks_exact(dim).enumerate() {
                            let score = clamp_score(dot(q, row));
                            if score >= cut {
                                let row = (base + r) as u32;
                                found[qi].push(Candidate { score, rank: self.rank[row as usize], row });
                            }
                        }
                    }
                }
                found.into_iter().map(|c| self.hits_from(c)).collect()
            })
            .collect();
        Ok(groups.into_iter().flatten().collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_index(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_index(path)
    }
}

fn check_threshold(t: f32) -> Result<()> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(VindexError::InvalidThreshold(t));
    }
    Ok(())
}
