//! Planted-target synthetic retrieval instances.
//!
//! Each query gets its own gallery of `n_candidates` candidates, recorded as
//! the query's subset; the database is the union of all galleries. For query
//! `q`, drawing from one seeded stream in this order:
//!
//! 1. reference `x` and modification direction `m`, both uniform on the sphere;
//!    target center `y = normalize(x + beta * m)`.
//! 2. `K` captions `normalize(y + caption_noise * g + leak * x)`, `g ~ N(0, I)`.
//! 3. Gallery centers: `positives` copies of `y`, then `x` itself when
//!    `reference_distractor` is set, then uniform distractor centers.
//! 4. Gallery slot order is shuffled, then every slot gets `M` views
//!    `normalize(center + aug_noise * h)`, `h ~ N(0, I)`.
//!
//! The query's transition vector is `m` and its reference embedding is `x`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::metrics::GroundTruth;
use crate::retrieval::QueryRecord;
use crate::scalar::Scalar;
use crate::store::{
    self, CandidateDatabase, CandidateRow, DatabaseLine, EmbeddingBank, MetaRow, QueryRow,
};
use crate::transition::TransitionVector;
use crate::transport::{PointSet, TargetDistribution};

use super::rng::SynthRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub dim: usize,
    /// Gallery size per query.
    pub n_candidates: usize,
    pub n_queries: usize,
    pub k_captions: usize,
    pub m_views: usize,
    /// Modification strength.
    pub beta: f64,
    pub caption_noise: f64,
    /// How strongly captions are pulled toward the reference.
    pub leak: f64,
    pub aug_noise: f64,
    /// Put the reference image itself into the gallery as a distractor.
    pub reference_distractor: bool,
    /// Planted positives per query (more than one for mAP experiments).
    pub positives: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 32,
            n_candidates: 100,
            n_queries: 200,
            k_captions: 5,
            m_views: 10,
            beta: 1.0,
            caption_noise: 0.1,
            leak: 0.8,
            aug_noise: 0.1,
            reference_distractor: true,
            positives: 1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidParameter(m));
        for (name, v) in [
            ("beta", self.beta),
            ("caption_noise", self.caption_noise),
            ("leak", self.leak),
            ("aug_noise", self.aug_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.dim < 2 {
            return invalid(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.n_candidates < 2 {
            return invalid(format!("n_candidates must be at least 2, got {}", self.n_candidates));
        }
        if self.n_queries == 0 || self.k_captions == 0 || self.m_views == 0 || self.positives == 0
        {
            return invalid("n_queries, k_captions, m_views and positives must be positive".into());
        }
        let fixed = self.positives + self.reference_distractor as usize;
        if fixed > self.n_candidates {
            return invalid(format!(
                "gallery of {} cannot hold {} planted candidates",
                self.n_candidates, fixed
            ));
        }
        if self.beta == 0.0 && self.reference_distractor {
            return Err(Error::DegenerateParams(
                "beta = 0 puts the target on the reference, which is also in the gallery".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Instance<T: Scalar> {
    pub params: SynthParams,
    pub queries: Vec<QueryRecord<T>>,
    pub database: CandidateDatabase<T>,
    pub truth: Vec<GroundTruth>,
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= crate::embedding::MIN_NORM {
        return Err(Error::DegenerateParams(format!("generated vector has norm {n:e}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

pub fn generate_instance<T: Scalar>(params: &SynthParams) -> Result<Instance<T>> {
    params.validate()?;
    let p = params;
    let d = p.dim;
    let mut rng = SynthRng::new(p.seed);
    let mut queries = Vec::with_capacity(p.n_queries);
    let mut truth = Vec::with_capacity(p.n_queries);
    let mut entries = Vec::with_capacity(p.n_queries * p.n_candidates);

    for q in 0..p.n_queries {
        let x = rng.unit_vector(d);
        let m = rng.unit_vector(d);
        let y = normalized(&axpy(&x, p.beta, &m))?;

        let mut captions = Vec::with_capacity(p.k_captions);
        for _ in 0..p.k_captions {
            let g = rng.gaussian_vec(d);
            let t = axpy(&axpy(&y, p.caption_noise, &g), p.leak, &x);
            captions.push(Embedding::normalize_f64(&normalized(&t)?)?);
        }

        // (center, is_positive)
        let mut slots: Vec<(Vec<f64>, bool)> = Vec::with_capacity(p.n_candidates);
        for _ in 0..p.positives {
            slots.push((y.clone(), true));
        }
        if p.reference_distractor {
            slots.push((x.clone(), false));
        }
        while slots.len() < p.n_candidates {
            slots.push((rng.unit_vector(d), false));
        }
        rng.shuffle(&mut slots);

        let mut gallery = Vec::with_capacity(p.n_candidates);
        let mut positives = Vec::with_capacity(p.positives);
        for (slot, (center, positive)) in slots.iter().enumerate() {
            let id = format!("q{q:04}-c{slot:03}");
            let mut views = Vec::with_capacity(p.m_views);
            for _ in 0..p.m_views {
                let h = rng.gaussian_vec(d);
                views.push(Embedding::normalize_f64(&normalized(&axpy(center, p.aug_noise, &h))?)?);
            }
            if *positive {
                positives.push(id.clone());
            }
            gallery.push(id.clone());
            entries.push((id, TargetDistribution::from_points(views)?));
        }

        let qid = format!("q{q:04}");
        truth.push(GroundTruth::new(qid.clone(), positives)?);
        queries.push(QueryRecord {
            id: qid,
            captions,
            delta: Some(TransitionVector::from_embedding(&Embedding::normalize_f64(&m)?)?),
            reference: Some(Embedding::normalize_f64(&x)?),
            subset: Some(gallery),
        });
    }

    let meta = BTreeMap::from([
        ("generator".to_string(), "planted-target".to_string()),
        ("seed".to_string(), p.seed.to_string()),
    ]);
    let database = CandidateDatabase::new(entries, meta)?;
    Ok(Instance { params: params.clone(), queries, database, truth })
}

/// File names written by [`write_instance`].
pub const DB_MANIFEST: &str = "db.jsonl";
pub const QUERY_MANIFEST: &str = "queries.jsonl";
pub const LABELS: &str = "labels.jsonl";
const DB_BANK: &str = "candidates.bank";
const QUERY_BANK: &str = "queries.bank";

fn to_f32<T: Scalar>(e: &Embedding<T>) -> Vec<f32> {
    e.values().iter().map(|x| x.to_f64_lossy() as f32).collect()
}

/// Write an instance as banks plus the three manifests into `dir`.
pub fn write_instance<T: Scalar>(dir: impl AsRef<Path>, inst: &Instance<T>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut lines = vec![DatabaseLine::Meta(MetaRow { meta: inst.database.meta().clone() })];
    for (id, set) in inst.database.iter() {
        let start = rows.len() as u64;
        rows.extend(set.points().iter().map(to_f32));
        lines.push(DatabaseLine::Candidate(CandidateRow {
            id: id.to_string(),
            bank: DB_BANK.into(),
            rows: (start..rows.len() as u64).collect(),
        }));
    }
    store::write_bank(dir.join(DB_BANK), &EmbeddingBank::from_rows(&rows)?)?;
    store::write_jsonl(&dir.join(DB_MANIFEST), lines)?;

    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut qrows = Vec::with_capacity(inst.queries.len());
    for q in &inst.queries {
        let start = rows.len() as u64;
        rows.extend(q.captions.iter().map(to_f32));
        let caption_rows = (start..rows.len() as u64).collect();
        let delta_row = q.delta.as_ref().map(|dv| {
            rows.push(to_f32(dv.embedding()));
            rows.len() as u64 - 1
        });
        let reference_row = q.reference.as_ref().map(|r| {
            rows.push(to_f32(r));
            rows.len() as u64 - 1
        });
        qrows.push(QueryRow {
            id: q.id.clone(),
            bank: QUERY_BANK.into(),
            caption_rows,
            delta_row,
            reference_row,
            subset: q.subset.clone(),
        });
    }
    store::write_bank(dir.join(QUERY_BANK), &EmbeddingBank::from_rows(&rows)?)?;
    store::write_jsonl(&dir.join(QUERY_MANIFEST), qrows)?;
    store::write_labels(dir.join(LABELS), &inst.truth)
}

/// Uniform random database and queries for latency measurements.
///
/// Candidates are named `c{index:06}`; queries carry a transition vector and
/// no subset.
pub fn random_workload<T: Scalar>(
    seed: u64,
    n_candidates: usize,
    n_queries: usize,
    k_captions: usize,
    m_views: usize,
    dim: usize,
) -> Result<(Vec<QueryRecord<T>>, CandidateDatabase<T>)> {
    if n_candidates == 0 || n_queries == 0 || k_captions == 0 || m_views == 0 || dim == 0 {
        return Err(Error::InvalidParameter("workload sizes must be positive".into()));
    }
    let mut rng = SynthRng::new(seed);
    let unit = |rng: &mut SynthRng| Embedding::<T>::normalize_f64(&rng.unit_vector(dim));
    let mut entries = Vec::with_capacity(n_candidates);
    for i in 0..n_candidates {
        let views = (0..m_views).map(|_| unit(&mut rng)).collect::<Result<Vec<_>>>()?;
        entries.push((format!("c{i:06}"), TargetDistribution::from_points(views)?));
    }
    let db = CandidateDatabase::new(entries, BTreeMap::new())?;
    let mut queries = Vec::with_capacity(n_queries);
    for q in 0..n_queries {
        let captions = (0..k_captions).map(|_| unit(&mut rng)).collect::<Result<Vec<_>>>()?;
        let delta = TransitionVector::from_embedding(&unit(&mut rng)?)?;
        queries.push(QueryRecord {
            id: format!("q{q:06}"),
            captions,
            delta: Some(delta),
            reference: None,
            subset: None,
        });
    }
    Ok((queries, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{retrieve, ScoringConfig};
    use crate::transport::ct_distance;

    fn small() -> SynthParams {
        SynthParams { n_candidates: 8, n_queries: 4, dim: 8, ..Default::default() }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_instance::<f32>(&small()).unwrap();
        let b = generate_instance::<f32>(&small()).unwrap();
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.database.ids(), b.database.ids());
        for (x, y) in a.database.iter().zip(b.database.iter()) {
            assert_eq!(x, y);
        }
        let c = generate_instance::<f32>(&SynthParams { seed: 8, ..small() }).unwrap();
        assert_ne!(a.queries, c.queries);
    }

    #[test]
    fn shapes_and_gallery() {
        let inst = generate_instance::<f32>(&small()).unwrap();
        assert_eq!(inst.queries.len(), 4);
        assert_eq!(inst.database.len(), 32);
        for (q, t) in inst.queries.iter().zip(&inst.truth) {
            assert_eq!(q.captions.len(), 5);
            let subset = q.subset.as_ref().unwrap();
            assert_eq!(subset.len(), 8);
            assert_eq!(t.positives.len(), 1);
            assert!(subset.contains(t.positives.iter().next().unwrap()));
        }
        for (_, set) in inst.database.iter() {
            assert_eq!(set.len(), 10);
        }
    }

    #[test]
    fn noiseless_instance_has_zero_distance_to_planted() {
        let p = SynthParams {
            caption_noise: 0.0,
            leak: 0.0,
            aug_noise: 0.0,
            beta: 0.7,
            ..small()
        };
        let inst = generate_instance::<f64>(&p).unwrap();
        let cfg = ScoringConfig { use_transition: false, ..Default::default() };
        for (q, t) in inst.queries.iter().zip(&inst.truth) {
            let target = inst.database.get(t.positives.iter().next().unwrap()).unwrap();
            let captions = crate::retrieval::prepare_captions(q, &cfg).unwrap();
            let r = ct_distance(&captions, target, 0.1).unwrap();
            assert!(r.l_bi.abs() < 1e-12, "{}", r.l_bi);
            let ranking = retrieve(q, &inst.database, &cfg, 1).unwrap();
            assert!(t.positives.contains(&ranking.entries[0].candidate_id));
        }
    }

    #[test]
    fn invalid_and_degenerate_params() {
        let bad = SynthParams { dim: 1, ..small() };
        assert!(matches!(generate_instance::<f32>(&bad), Err(Error::InvalidParameter(_))));
        let bad = SynthParams { leak: -1.0, ..small() };
        assert!(generate_instance::<f32>(&bad).is_err());
        let bad = SynthParams { n_candidates: 1, ..small() };
        assert!(generate_instance::<f32>(&bad).is_err());
        let deg = SynthParams { beta: 0.0, ..small() };
        assert!(matches!(generate_instance::<f32>(&deg), Err(Error::DegenerateParams(_))));
        let ok = SynthParams { beta: 0.0, reference_distractor: false, ..small() };
        assert!(generate_instance::<f32>(&ok).is_ok());
    }

    #[test]
    fn multiple_positives() {
        let p = SynthParams { positives: 3, ..small() };
        let inst = generate_instance::<f32>(&p).unwrap();
        assert!(inst.truth.iter().all(|t| t.positives.len() == 3));
    }

    #[test]
    fn written_instance_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate_instance::<f32>(&small()).unwrap();
        write_instance(dir.path(), &inst).unwrap();
        let opts = store::LoadOptions::default();
        let db: CandidateDatabase<f32> =
            store::load_database(dir.path().join(DB_MANIFEST), opts).unwrap();
        let qs: Vec<QueryRecord<f32>> =
            store::load_queries(dir.path().join(QUERY_MANIFEST), opts).unwrap();
        let labels = store::load_labels(dir.path().join(LABELS)).unwrap();
        assert_eq!(qs, inst.queries);
        assert_eq!(labels, inst.truth);
        assert_eq!(db.ids(), inst.database.ids());
        assert_eq!(db.meta()["seed"], "7");
        for (a, b) in db.iter().zip(inst.database.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn random_workload_shapes() {
        let (qs, db) = random_workload::<f32>(1, 20, 3, 5, 10, 16).unwrap();
        assert_eq!(db.len(), 20);
        assert_eq!(qs.len(), 3);
        assert_eq!(db.dim(), 16);
        assert!(qs.iter().all(|q| q.captions.len() == 5 && q.delta.is_some()));
    }
}
