//! Set-to-set embedding retrieval.
//!
//! A query is a set of caption embeddings, optionally shifted toward a
//! modification-text embedding. A candidate is a set of image embeddings (the
//! image plus augmented views). Candidates are ranked by a bidirectional
//! conditional transport distance between the two sets, with entropic optimal
//! transport and mean-pooled cosine distance available as comparators.
//!
//! All numeric code is generic over the storage [`Scalar`] (`f32` or `f64`);
//! reductions always accumulate in `f64`. The aliases below fix the storage
//! type for the common cases.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod retrieval;
pub mod scalar;
pub mod store;
pub mod transition;
pub mod transport;

pub use embedding::{cosine_dist, cosine_sim, Embedding};
pub use error::{Error, Result};
pub use metrics::{map_at_k, recall_at_k, subset_recall_at_k, GroundTruth, MetricKind, MetricReport};
pub use retrieval::{
    retrieve, score_candidate, QueryRecord, RankedCandidate, Ranking, Retriever, ScoringConfig,
    ScoringMode,
};
pub use scalar::Scalar;
pub use store::{CandidateDatabase, EmbeddingBank, LoadOptions};
pub use transition::{
    apply_transition, build_caption_distribution, CaptionDistribution, TransitionVector,
};
pub use transport::{
    cost_matrix, ct_distance, mean_cosine_distance, sinkhorn_ot, CostMatrix, PointSet,
    SinkhornParams, SinkhornResult, TargetDistribution, TransportPlan, TransportResult, Weighting,
};

pub type Embedding32 = Embedding<f32>;
pub type Embedding64 = Embedding<f64>;
pub type CaptionDistribution32 = CaptionDistribution<f32>;
pub type CaptionDistribution64 = CaptionDistribution<f64>;
pub type TargetDistribution32 = TargetDistribution<f32>;
pub type TargetDistribution64 = TargetDistribution<f64>;
pub type TransitionVector32 = TransitionVector<f32>;
pub type TransitionVector64 = TransitionVector<f64>;
pub type QueryRecord32 = QueryRecord<f32>;
pub type QueryRecord64 = QueryRecord<f64>;
pub type CandidateDatabase32 = CandidateDatabase<f32>;
pub type CandidateDatabase64 = CandidateDatabase<f64>;
