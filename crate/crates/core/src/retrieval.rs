//! Query scoring and ranking over a candidate database.
//!
//! Every candidate is scored independently against the query's caption
//! distribution. Candidates are then sorted by ascending distance (ties by
//! ascending id) and receive a softmax probability over `-distance` computed
//! across the whole scored pool.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::CandidateDatabase;
use crate::transition::{
    build_caption_distribution_with, CaptionDistribution, FusionOptions, TransitionVector,
    DEFAULT_ALPHA,
};
use crate::transport::{
    ct_lbi, mean_cosine_distance, sinkhorn_ot, CtScratch, PointSet, SinkhornParams,
    TargetDistribution, Weighting, DEFAULT_TAU,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord<T: Scalar> {
    pub id: String,
    pub captions: Vec<Embedding<T>>,
    pub delta: Option<TransitionVector<T>>,
    /// Reference image embedding; carried for diagnostics, never scored.
    pub reference: Option<Embedding<T>>,
    /// Restrict scoring to these candidate ids.
    pub subset: Option<Vec<String>>,
}

impl<T: Scalar> QueryRecord<T> {
    /// Keep only the first `k` captions.
    pub fn with_caption_prefix(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyCaptionSet);
        }
        Ok(Self { captions: self.captions.iter().take(k).cloned().collect(), ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Bidirectional conditional transport.
    Ct,
    /// Entropic optimal transport (Sinkhorn).
    Ot,
    /// Cosine distance of mean-pooled sets.
    CosineMean,
}

impl ScoringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMode::Ct => "ct",
            ScoringMode::Ot => "ot",
            ScoringMode::CosineMean => "cosine_mean",
        }
    }
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ct" => Ok(ScoringMode::Ct),
            "ot" => Ok(ScoringMode::Ot),
            "cosine_mean" | "cosine-mean" => Ok(ScoringMode::CosineMean),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub mode: ScoringMode,
    pub alpha: f64,
    pub tau: f64,
    pub use_transition: bool,
    /// Re-normalize fused captions (on by default).
    pub renormalize_fusion: bool,
    /// Use plain double sums instead of the expectation form of `l_bi`.
    pub raw_sum_lbi: bool,
    pub sinkhorn: SinkhornParams,
    /// Temperature of the ranking softmax over `-distance`.
    pub score_temperature: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            mode: ScoringMode::Ct,
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            use_transition: true,
            renormalize_fusion: true,
            raw_sum_lbi: false,
            sinkhorn: SinkhornParams::default(),
            score_temperature: 1.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::NonPositiveTau(self.tau));
        }
        if !(self.score_temperature > 0.0) || !self.score_temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "score temperature must be positive, got {}",
                self.score_temperature
            )));
        }
        if !(self.sinkhorn.epsilon > 0.0) {
            return Err(Error::NonPositiveEpsilon(self.sinkhorn.epsilon));
        }
        Ok(())
    }

    fn weighting(&self) -> Weighting {
        if self.raw_sum_lbi {
            Weighting::RawSum
        } else {
            Weighting::Expectation
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate_id: String,
    pub distance: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    /// Ascending distance, ties by ascending candidate id.
    pub entries: Vec<RankedCandidate>,
    pub truncated_at: usize,
    /// Number of candidates scored, before truncation.
    pub pool_size: usize,
    /// The candidate subset this ranking was restricted to, if any.
    pub subset: Option<Vec<String>>,
}

impl Ranking {
    /// True when scores never increase down the list.
    pub fn is_score_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].score >= w[1].score)
    }

    pub fn candidate_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.candidate_id.as_str())
    }
}

/// Caption distribution for a query under `cfg`, fused when transition is on.
pub fn prepare_captions<T: Scalar>(
    query: &QueryRecord<T>,
    cfg: &ScoringConfig,
) -> Result<CaptionDistribution<T>> {
    let delta = if cfg.use_transition {
        Some(query.delta.as_ref().ok_or_else(|| Error::MissingDelta { query: query.id.clone() })?)
    } else {
        None
    };
    build_caption_distribution_with(
        &query.captions,
        delta,
        FusionOptions { alpha: cfg.alpha, renormalize: cfg.renormalize_fusion },
    )
}

fn score_prepared<T: Scalar>(
    captions: &CaptionDistribution<T>,
    candidate: &TargetDistribution<T>,
    cfg: &ScoringConfig,
    scratch: &mut CtScratch,
) -> Result<f64> {
    match cfg.mode {
        ScoringMode::Ct => {
            ct_lbi(captions.points(), candidate.points(), cfg.tau, cfg.weighting(), scratch)
        }
        ScoringMode::Ot => sinkhorn_ot(captions, candidate, cfg.sinkhorn).map(|r| r.cost),
        ScoringMode::CosineMean => mean_cosine_distance(captions, candidate),
    }
}

/// Distance between one query and one candidate under `cfg`.
pub fn score_candidate<T: Scalar>(
    query: &QueryRecord<T>,
    candidate: &TargetDistribution<T>,
    cfg: &ScoringConfig,
) -> Result<f64> {
    cfg.validate()?;
    let captions = prepare_captions(query, cfg)?;
    score_prepared(&captions, candidate, cfg, &mut CtScratch::default())
}

/// Scores queries against a database on a fixed number of worker threads.
///
/// Work is split across candidates only; each distance is computed with a
/// fixed reduction order, so rankings are identical for any worker count.
pub struct Retriever {
    pool: Option<rayon::ThreadPool>,
    workers: usize,
}

impl Retriever {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn retrieve<T: Scalar>(
        &self,
        query: &QueryRecord<T>,
        db: &CandidateDatabase<T>,
        cfg: &ScoringConfig,
        k: usize,
    ) -> Result<Ranking> {
        cfg.validate()?;
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let pool: Vec<usize> = match &query.subset {
            None => (0..db.len()).collect(),
            Some(ids) => {
                let mut seen = HashSet::new();
                let mut idx = Vec::with_capacity(ids.len());
                for id in ids {
                    let i = db.index_of(id).ok_or_else(|| Error::UnknownSubsetId {
                        query: query.id.clone(),
                        id: id.clone(),
                    })?;
                    if seen.insert(i) {
                        idx.push(i);
                    }
                }
                idx
            }
        };
        if pool.is_empty() {
            return Err(Error::EmptyRanking { query: query.id.clone() });
        }
        let captions = prepare_captions(query, cfg)?;
        if captions.dim() != db.dim() {
            return Err(Error::DimMismatch { expected: db.dim(), found: captions.dim() });
        }

        let score = |scratch: &mut CtScratch, &i: &usize| {
            score_prepared(&captions, db.candidate(i), cfg, scratch).map(|d| (i, d))
        };
        let scored: Vec<(usize, f64)> = match &self.pool {
            Some(p) => p.install(|| {
                pool.par_iter().map_init(CtScratch::default, score).collect::<Result<Vec<_>>>()
            })?,
            None => {
                let mut scratch = CtScratch::default();
                pool.iter().map(|i| score(&mut scratch, i)).collect::<Result<Vec<_>>>()?
            }
        };

        Ok(rank(query, db, scored, cfg.score_temperature, k))
    }

    /// Rankings for many queries, in input order.
    pub fn retrieve_all<T: Scalar>(
        &self,
        queries: &[QueryRecord<T>],
        db: &CandidateDatabase<T>,
        cfg: &ScoringConfig,
        k: usize,
    ) -> Result<Vec<Ranking>> {
        queries.iter().map(|q| self.retrieve(q, db, cfg, k)).collect()
    }
}

/// Single-threaded retrieval.
pub fn retrieve<T: Scalar>(
    query: &QueryRecord<T>,
    db: &CandidateDatabase<T>,
    cfg: &ScoringConfig,
    k: usize,
) -> Result<Ranking> {
    Retriever::new(1)?.retrieve(query, db, cfg, k)
}

fn rank<T: Scalar>(
    query: &QueryRecord<T>,
    db: &CandidateDatabase<T>,
    mut scored: Vec<(usize, f64)>,
    temperature: f64,
    k: usize,
) -> Ranking {
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| db.id(a.0).cmp(db.id(b.0))));
    let d_min = scored[0].1;
    let weights: Vec<f64> =
        scored.iter().map(|(_, d)| (-(d - d_min) / temperature).exp()).collect();
    let z: f64 = weights.iter().sum();
    let pool_size = scored.len();
    let entries = scored
        .iter()
        .zip(&weights)
        .take(k)
        .map(|(&(i, d), w)| RankedCandidate {
            candidate_id: db.id(i).to_string(),
            distance: d,
            score: w / z,
        })
        .collect();
    Ranking {
        query_id: query.id.clone(),
        entries,
        truncated_at: k,
        pool_size,
        subset: query.subset.clone(),
    }
}
