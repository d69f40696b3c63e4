//! Retrieval quality metrics over rankings: Recall@k, mAP@k and subset Recall@k.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::Ranking;

/// Positive candidate ids for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub query_id: String,
    pub positives: BTreeSet<String>,
}

impl GroundTruth {
    pub fn new(query_id: impl Into<String>, positives: Vec<String>) -> Result<Self> {
        let query_id = query_id.into();
        if positives.is_empty() {
            return Err(Error::InvalidParameter(format!("query {query_id} has no positives")));
        }
        let n = positives.len();
        let positives: BTreeSet<String> = positives.into_iter().collect();
        if positives.len() != n {
            return Err(Error::InvalidParameter(format!(
                "query {query_id} lists a positive more than once"
            )));
        }
        Ok(Self { query_id, positives })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Recall,
    Map,
    SubsetRecall,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Recall => "recall",
            MetricKind::Map => "map",
            MetricKind::SubsetRecall => "subset_recall",
        }
    }

    pub fn label(self, k: usize) -> String {
        match self {
            MetricKind::Recall => format!("R@{k}"),
            MetricKind::Map => format!("mAP@{k}"),
            MetricKind::SubsetRecall => format!("Rsubset@{k}"),
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recall" => Ok(MetricKind::Recall),
            "map" => Ok(MetricKind::Map),
            "subset_recall" | "subset-recall" => Ok(MetricKind::SubsetRecall),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub k: usize,
    /// Mean over queries, in `[0, 1]`.
    pub value: f64,
    pub n_queries: usize,
}

pub fn evaluate(
    kind: MetricKind,
    rankings: &[Ranking],
    truth: &[GroundTruth],
    k: usize,
) -> Result<MetricReport> {
    match kind {
        MetricKind::Recall => recall_at_k(rankings, truth, k),
        MetricKind::Map => map_at_k(rankings, truth, k),
        MetricKind::SubsetRecall => subset_recall_at_k(rankings, truth, k),
    }
}

pub fn recall_at_k(rankings: &[Ranking], truth: &[GroundTruth], k: usize) -> Result<MetricReport> {
    aggregate(MetricKind::Recall, rankings, truth, k, |top, gt| {
        top.iter().any(|id| gt.positives.contains(*id)) as u8 as f64
    })
}

/// AP@k normalized by `min(|positives|, k)`.
pub fn map_at_k(rankings: &[Ranking], truth: &[GroundTruth], k: usize) -> Result<MetricReport> {
    aggregate(MetricKind::Map, rankings, truth, k, |top, gt| {
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (i, id) in top.iter().enumerate() {
            if gt.positives.contains(*id) {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        sum / gt.positives.len().min(k) as f64
    })
}

/// Recall@k over rankings restricted to per-query subsets.
///
/// Every ranking must carry its subset, and the subset must contain at least
/// one positive.
pub fn subset_recall_at_k(
    rankings: &[Ranking],
    truth: &[GroundTruth],
    k: usize,
) -> Result<MetricReport> {
    let lookup = index_truth(truth);
    for r in rankings {
        let subset = r.subset.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!("ranking for {} was not subset-restricted", r.query_id))
        })?;
        let gt = lookup
            .get(r.query_id.as_str())
            .ok_or_else(|| Error::MissingTruth { query: r.query_id.clone() })?;
        if !subset.iter().any(|id| gt.positives.contains(id)) {
            return Err(Error::MissingTruth { query: r.query_id.clone() });
        }
    }
    let mut report = recall_at_k(rankings, truth, k)?;
    report.metric = MetricKind::SubsetRecall;
    Ok(report)
}

fn index_truth(truth: &[GroundTruth]) -> HashMap<&str, &GroundTruth> {
    truth.iter().map(|t| (t.query_id.as_str(), t)).collect()
}

fn aggregate(
    metric: MetricKind,
    rankings: &[Ranking],
    truth: &[GroundTruth],
    k: usize,
    per_query: impl Fn(&[&str], &GroundTruth) -> f64,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if rankings.is_empty() {
        return Err(Error::InvalidParameter("no rankings to evaluate".into()));
    }
    let lookup = index_truth(truth);
    let mut total = 0.0;
    for r in rankings {
        let gt = lookup
            .get(r.query_id.as_str())
            .ok_or_else(|| Error::MissingTruth { query: r.query_id.clone() })?;
        if r.entries.is_empty() || r.pool_size == 0 {
            return Err(Error::EmptyRanking { query: r.query_id.clone() });
        }
        // a ranking cut below k is only acceptable when it already holds the whole pool
        if r.entries.len() < k && r.entries.len() < r.pool_size {
            return Err(Error::KExceedsPool {
                query: r.query_id.clone(),
                k,
                have: r.entries.len(),
            });
        }
        let top: Vec<&str> = r.entries.iter().take(k).map(|e| e.candidate_id.as_str()).collect();
        total += per_query(&top, gt);
    }
    Ok(MetricReport { metric, k, value: total / rankings.len() as f64, n_queries: rankings.len() })
}
