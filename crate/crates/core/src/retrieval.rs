//! Gallery construction, exact Euclidean ranking and the Recall@K / AP
//! evaluation protocol.
//!
//! Galleries at desk scale are small, so ranking is a full stable sort by
//! distance; ties keep gallery insertion order, which makes every metric
//! deterministic.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

/// Errors raised by ranking and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalError {
    DimensionMismatch { expected: usize, actual: usize },
    EmptyGallery,
    EmptyResults,
    /// A query's class has no positive in the gallery.
    NoPositives { query_id: String },
    InvalidK { k: usize },
    NonFiniteVector { id: String },
}

impl std::fmt::Display for RetrievalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RetrievalError::DimensionMismatch { expected, actual } => {
                write!(f, "embedding dimension mismatch: expected {expected}, got {actual}")
            }
            RetrievalError::EmptyGallery => write!(f, "gallery must be non-empty"),
            RetrievalError::EmptyResults => write!(f, "metric undefined over zero queries"),
            RetrievalError::NoPositives { query_id } => {
                write!(f, "query {query_id} has no positive in the gallery")
            }
            RetrievalError::InvalidK { k } => write!(f, "k must be >= 1, got {k}"),
            RetrievalError::NonFiniteVector { id } => {
                write!(f, "embedding {id} contains non-finite values")
            }
        }
    }
}

impl std::error::Error for RetrievalError {}

/// A labeled embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub class_id: usize,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, class_id: usize, vector: Vec<f64>) -> Result<Self, RetrievalError> {
        let id = id.into();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFiniteVector { id });
        }
        Ok(Self { id, class_id, vector })
    }
}

/// Full ranking of a gallery for one query, ascending by distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub query_id: String,
    /// Gallery ids sorted by ascending distance; ties keep insertion order.
    pub ordered_ids: Vec<String>,
    pub distances: Vec<f64>,
    /// 1-based rank of the first gallery item sharing the query's class;
    /// `None` when the gallery holds no positive.
    pub rank_of_first_positive: Option<usize>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rank the whole gallery for one query by Euclidean distance.
pub fn rank(query: &EmbeddingRecord, gallery: &[EmbeddingRecord]) -> Result<RankingResult, RetrievalError> {
    if gallery.is_empty() {
        return Err(RetrievalError::EmptyGallery);
    }
    let dim = query.vector.len();
    for g in gallery {
        if g.vector.len() != dim {
            return Err(RetrievalError::DimensionMismatch { expected: dim, actual: g.vector.len() });
        }
    }
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    let dists: Vec<f64> = gallery.iter().map(|g| euclidean(&query.vector, &g.vector)).collect();
    // Stable sort: equal distances keep gallery insertion order.
    order.sort_by(|&a, &b| dists[a].partial_cmp(&dists[b]).expect("finite distances"));
    let ordered_ids = order.iter().map(|&i| gallery[i].id.clone()).collect();
    let distances = order.iter().map(|&i| dists[i]).collect();
    let rank_of_first_positive = order
        .iter()
        .position(|&i| gallery[i].class_id == query.class_id)
        .map(|pos| pos + 1);
    Ok(RankingResult { query_id: query.id.clone(), ordered_ids, distances, rank_of_first_positive })
}

/// Fraction of queries whose first positive lands within the top `k`.
pub fn recall_at_k(results: &[RankingResult], k: usize) -> Result<f64, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK { k });
    }
    if results.is_empty() {
        return Err(RetrievalError::EmptyResults);
    }
    let hits = results
        .iter()
        .filter(|r| r.rank_of_first_positive.map_or(false, |rank| rank <= k))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Average precision of one ranking given the set of positive gallery ids:
/// the mean over positive hits of `hits_so_far / rank`.
pub fn average_precision(result: &RankingResult, positives: &HashSet<String>) -> Result<f64, RetrievalError> {
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (idx, id) in result.ordered_ids.iter().enumerate() {
        if positives.contains(id) {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(RetrievalError::NoPositives { query_id: result.query_id.clone() });
    }
    Ok(sum / hits as f64)
}

/// Per-query entry of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryMetrics {
    pub id: String,
    /// 1-based rank of the first positive.
    pub rank: usize,
    pub ap: f64,
}

/// Evaluation report: Recall@K per requested k, mean AP, and the per-query
/// breakdown in query order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recalls: BTreeMap<usize, f64>,
    pub map: f64,
    pub per_query: Vec<PerQueryMetrics>,
}

/// Rank every query against the gallery and aggregate R@K and mean AP.
/// Positives are the gallery records sharing the query's class id; every
/// query class must be present in the gallery.
pub fn evaluate(
    queries: &[EmbeddingRecord],
    gallery: &[EmbeddingRecord],
    k_list: &[usize],
) -> Result<MetricsReport, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::EmptyResults);
    }
    let mut results = Vec::with_capacity(queries.len());
    let mut per_query = Vec::with_capacity(queries.len());
    let mut ap_sum = 0.0f64;
    for q in queries {
        let result = rank(q, gallery)?;
        let positives: HashSet<String> = gallery
            .iter()
            .filter(|g| g.class_id == q.class_id)
            .map(|g| g.id.clone())
            .collect();
        let ap = average_precision(&result, &positives)?;
        let first = result.rank_of_first_positive.expect("ap guaranteed a positive");
        ap_sum += ap;
        per_query.push(PerQueryMetrics { id: q.id.clone(), rank: first, ap });
        results.push(result);
    }
    let mut recalls = BTreeMap::new();
    for &k in k_list {
        recalls.insert(k, recall_at_k(&results, k)?);
    }
    Ok(MetricsReport { recalls, map: ap_sum / queries.len() as f64, per_query })
}

/// Sidecar manifest record for embeddings stored as `FMAP1` vectors
/// (`channels = dim`, spatial size 1x1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingManifestRecord {
    pub id: String,
    pub class_id: usize,
    pub path: String,
}

/// Load embeddings from a JSON-lines sidecar manifest; each record points to
/// an `FMAP1` file holding one vector.
pub fn load_embeddings(manifest_path: &Path) -> Result<Vec<EmbeddingRecord>, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let entry: EmbeddingManifestRecord = serde_json::from_str(line)?;
        let tensor = crate::fmap::load(&base.join(&entry.path))?;
        let vector: Vec<f64> = tensor.data().iter().map(|&v| v as f64).collect();
        records.push(EmbeddingRecord::new(entry.id, entry.class_id, vector)?);
    }
    Ok(records)
}
