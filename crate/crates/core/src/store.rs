//! Persistence: binary embedding banks, JSON Lines manifests and the
//! immutable in-memory candidate database.
//!
//! Bank layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "STCH"
//! 4       2     version (u16) = 1
//! 6       4     dim (u32)
//! 10      8     count (u64)
//! 18      ...   count * dim f32, row-major
//! ```
//!
//! Manifests are JSON Lines. Bank paths inside a manifest are resolved
//! relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::metrics::GroundTruth;
use crate::retrieval::{QueryRecord, RankedCandidate, Ranking};
use crate::scalar::Scalar;
use crate::transition::TransitionVector;
use crate::transport::TargetDistribution;

pub const BANK_MAGIC: [u8; 4] = *b"STCH";
pub const BANK_VERSION: u16 = 1;
pub const BANK_HEADER_LEN: u64 = 18;

/// Dense row-major matrix of f32 embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    dim: u32,
    count: u64,
    data: Vec<f32>,
}

impl EmbeddingBank {
    pub fn new(dim: u32, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimZero);
        }
        if data.len() % dim as usize != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} values do not fill rows of dim {dim}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let count = (data.len() / dim as usize) as u64;
        Ok(Self { dim, count, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch { expected: dim, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim as u32, data)
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: u64) -> Option<&[f32]> {
        if i >= self.count {
            return None;
        }
        let d = self.dim as usize;
        let start = i as usize * d;
        Some(&self.data[start..start + d])
    }
}

pub fn write_bank(path: impl AsRef<Path>, bank: &EmbeddingBank) -> Result<()> {
    let path = path.as_ref();
    if bank.dim == 0 {
        return Err(Error::DimZero);
    }
    if let Some(index) = bank.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&BANK_MAGIC).map_err(io)?;
    w.write_all(&BANK_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&bank.dim.to_le_bytes()).map_err(io)?;
    w.write_all(&bank.count.to_le_bytes()).map_err(io)?;
    for x in &bank.data {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<EmbeddingBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes)
}

pub fn decode_bank(bytes: &[u8]) -> Result<EmbeddingBank> {
    let len = bytes.len() as u64;
    if len < 4 {
        return Err(Error::TruncatedFile { expected: BANK_HEADER_LEN, found: len });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != BANK_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if len < BANK_HEADER_LEN {
        return Err(Error::TruncatedFile { expected: BANK_HEADER_LEN, found: len });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().expect("2 bytes"));
    if version != BANK_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let count = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
    if dim == 0 {
        return Err(Error::DimZero);
    }
    let expected = count
        .checked_mul(dim as u64)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(BANK_HEADER_LEN))
        .ok_or(Error::TruncatedFile { expected: u64::MAX, found: len })?;
    if len < expected {
        return Err(Error::TruncatedFile { expected, found: len });
    }
    if len > expected {
        return Err(Error::InvalidParameter(format!(
            "bank has {} trailing bytes after {count} rows",
            len - expected
        )));
    }
    let data: Vec<f32> = bytes[BANK_HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    EmbeddingBank::new(dim, data)
}

/// Immutable id-indexed collection of target distributions.
///
/// Candidates are kept sorted by id, so iteration order and tie-breaking do
/// not depend on manifest order.
#[derive(Debug, Clone)]
pub struct CandidateDatabase<T: Scalar> {
    dim: usize,
    ids: Vec<String>,
    sets: Vec<TargetDistribution<T>>,
    index: HashMap<String, usize>,
    meta: BTreeMap<String, String>,
}

impl<T: Scalar> CandidateDatabase<T> {
    pub fn new(
        mut entries: Vec<(String, TargetDistribution<T>)>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateCandidateId(w[0].0.clone()));
            }
        }
        let dim = entries.first().map(|(_, s)| crate::transport::PointSet::dim(s)).unwrap_or(0);
        for (_, s) in &entries {
            let d = crate::transport::PointSet::dim(s);
            if d != dim {
                return Err(Error::DimMismatch { expected: dim, found: d });
            }
        }
        let index = entries.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        let (ids, sets) = entries.into_iter().unzip();
        Ok(Self { dim, ids, sets, index, meta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn candidate(&self, i: usize) -> &TargetDistribution<T> {
        &self.sets[i]
    }

    pub fn get(&self, id: &str) -> Option<&TargetDistribution<T>> {
        self.index.get(id).map(|&i| &self.sets[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TargetDistribution<T>)> {
        self.ids.iter().map(String::as_str).zip(&self.sets)
    }

    /// A copy in which every candidate keeps only its first `m` points.
    pub fn with_point_prefix(&self, m: usize) -> Result<Self> {
        let sets = self.sets.iter().map(|s| s.truncated(m)).collect::<Result<Vec<_>>>()?;
        Ok(Self { sets, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Normalize every embedding on load. Off keeps raw rows for oracle checks.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRow {
    pub id: String,
    pub bank: String,
    pub rows: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRow {
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatabaseLine {
    Meta(MetaRow),
    Candidate(CandidateRow),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRow {
    pub id: String,
    pub bank: String,
    pub caption_rows: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_row: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_row: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRow {
    pub query_id: String,
    pub positives: Vec<String>,
}

/// One ranking per line in the rankings output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub query_id: String,
    pub candidates: Vec<String>,
    pub distances: Vec<f64>,
    pub scores: Vec<f64>,
    pub k: usize,
    pub pool_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<String>>,
}

impl From<&Ranking> for RankingRow {
    fn from(r: &Ranking) -> Self {
        Self {
            query_id: r.query_id.clone(),
            candidates: r.entries.iter().map(|e| e.candidate_id.clone()).collect(),
            distances: r.entries.iter().map(|e| e.distance).collect(),
            scores: r.entries.iter().map(|e| e.score).collect(),
            k: r.truncated_at,
            pool_size: r.pool_size,
            subset: r.subset.clone(),
        }
    }
}

impl RankingRow {
    fn into_ranking(self, path: &Path, line: usize) -> Result<Ranking> {
        let n = self.candidates.len();
        if self.distances.len() != n || self.scores.len() != n {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "candidates, distances and scores differ in length".into(),
            });
        }
        let entries = self
            .candidates
            .into_iter()
            .zip(self.distances)
            .zip(self.scores)
            .map(|((candidate_id, distance), score)| RankedCandidate { candidate_id, distance, score })
            .collect();
        Ok(Ranking {
            query_id: self.query_id,
            entries,
            truncated_at: self.k,
            pool_size: self.pool_size,
            subset: self.subset,
        })
    }
}

/// Non-empty lines of a JSONL file, each parsed as `R`, with 1-based line numbers.
pub fn read_jsonl<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, R)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, row));
    }
    Ok(out)
}

pub fn write_jsonl<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(&mut w, rows).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl_to<S: Serialize>(
    w: &mut impl Write,
    rows: impl IntoIterator<Item = S>,
) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads banks on first use, keyed by resolved path.
struct BankCache {
    base: PathBuf,
    banks: HashMap<PathBuf, EmbeddingBank>,
    dim: Option<usize>,
}

impl BankCache {
    fn new(manifest: &Path) -> Self {
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Self { base, banks: HashMap::new(), dim: None }
    }

    fn get(&mut self, rel: &str) -> Result<&EmbeddingBank> {
        let path = self.base.join(rel);
        if !self.banks.contains_key(&path) {
            let bank = read_bank(&path)?;
            match self.dim {
                None => self.dim = Some(bank.dim()),
                Some(d) if d != bank.dim() => {
                    return Err(Error::DimMismatchAcrossBanks { path, expected: d, found: bank.dim() })
                }
                Some(_) => {}
            }
            self.banks.insert(path.clone(), bank);
        }
        Ok(&self.banks[&path])
    }
}

fn embed_row<T: Scalar>(
    bank: &EmbeddingBank,
    owner: &str,
    row: u64,
    opts: LoadOptions,
) -> Result<Embedding<T>> {
    let raw = bank.row(row).ok_or_else(|| Error::RowOutOfRange {
        owner: owner.to_string(),
        row,
        count: bank.count(),
    })?;
    let values: Vec<T> = raw.iter().map(|&x| T::from_f64_lossy(x as f64)).collect();
    if opts.normalize {
        Embedding::normalize(&values)
    } else {
        Embedding::from_raw(values)
    }
}

pub fn load_database<T: Scalar>(
    manifest: impl AsRef<Path>,
    opts: LoadOptions,
) -> Result<CandidateDatabase<T>> {
    let manifest = manifest.as_ref();
    let mut cache = BankCache::new(manifest);
    let mut meta = BTreeMap::new();
    let mut entries = Vec::new();
    let mut seen = HashMap::new();
    for (line, row) in read_jsonl::<DatabaseLine>(manifest)? {
        let row = match row {
            DatabaseLine::Meta(m) => {
                meta.extend(m.meta);
                continue;
            }
            DatabaseLine::Candidate(c) => c,
        };
        if seen.insert(row.id.clone(), line).is_some() {
            return Err(Error::DuplicateCandidateId(row.id));
        }
        if row.rows.is_empty() {
            return Err(Error::Parse {
                path: manifest.to_path_buf(),
                line,
                message: format!("candidate {} lists no rows", row.id),
            });
        }
        let bank = cache.get(&row.bank)?;
        let points = row
            .rows
            .iter()
            .map(|&r| embed_row(bank, &row.id, r, opts))
            .collect::<Result<Vec<_>>>()?;
        entries.push((row.id, TargetDistribution::from_points(points)?));
    }
    CandidateDatabase::new(entries, meta)
}

pub fn load_queries<T: Scalar>(
    manifest: impl AsRef<Path>,
    opts: LoadOptions,
) -> Result<Vec<QueryRecord<T>>> {
    let manifest = manifest.as_ref();
    let mut cache = BankCache::new(manifest);
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, row) in read_jsonl::<QueryRow>(manifest)? {
        if seen.insert(row.id.clone(), line).is_some() {
            return Err(Error::DuplicateQueryId(row.id));
        }
        if row.caption_rows.is_empty() {
            return Err(Error::Parse {
                path: manifest.to_path_buf(),
                line,
                message: format!("query {} lists no caption rows", row.id),
            });
        }
        let bank = cache.get(&row.bank)?;
        let captions = row
            .caption_rows
            .iter()
            .map(|&r| embed_row(bank, &row.id, r, opts))
            .collect::<Result<Vec<_>>>()?;
        // the transition direction is always unit length
        let delta = row
            .delta_row
            .map(|r| {
                embed_row::<T>(bank, &row.id, r, LoadOptions { normalize: true })
                    .map(|e| TransitionVector::from_embedding(&e))
            })
            .transpose()?
            .transpose()?;
        let reference = row.reference_row.map(|r| embed_row(bank, &row.id, r, opts)).transpose()?;
        out.push(QueryRecord { id: row.id, captions, delta, reference, subset: row.subset });
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    read_jsonl::<LabelRow>(path)?
        .into_iter()
        .map(|(line, row)| {
            GroundTruth::new(row.query_id, row.positives).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, truth: &[GroundTruth]) -> Result<()> {
    write_jsonl(
        path.as_ref(),
        truth.iter().map(|t| LabelRow {
            query_id: t.query_id.clone(),
            positives: t.positives.iter().cloned().collect(),
        }),
    )
}

pub fn write_rankings(path: impl AsRef<Path>, rankings: &[Ranking]) -> Result<()> {
    write_jsonl(path.as_ref(), rankings.iter().map(RankingRow::from))
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<Ranking>> {
    let path = path.as_ref();
    read_jsonl::<RankingRow>(path)?
        .into_iter()
        .map(|(line, row)| row.into_ranking(path, line))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn bank_3x4() -> EmbeddingBank {
        EmbeddingBank::new(4, (0..12).map(|i| i as f32 * 0.25 - 1.0).collect()).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tmp();
        let p = dir.path().join("a.bank");
        let b = bank_3x4();
        write_bank(&p, &b).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 18 + 12 * 4);
        assert_eq!(&bytes[..4], b"STCH");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[4, 0, 0, 0]);
        assert_eq!(&bytes[10..18], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(read_bank(&p).unwrap(), b);
    }

    #[test]
    fn malformed_banks() {
        let dir = tmp();
        let p = dir.path().join("a.bank");
        write_bank(&p, &bank_3x4()).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_bank(&bad), Err(Error::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_bank(&bad), Err(Error::UnsupportedVersion(2))));

        let mut bad = good.clone();
        bad[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_bank(&bad), Err(Error::DimZero)));

        assert!(matches!(decode_bank(&good[..good.len() - 1]), Err(Error::TruncatedFile { .. })));
        assert!(matches!(decode_bank(&good[..10]), Err(Error::TruncatedFile { .. })));
        assert!(matches!(decode_bank(&good[..2]), Err(Error::TruncatedFile { .. })));

        // header says 10 rows, payload holds 9
        let b = EmbeddingBank::new(2, vec![0.5; 18]).unwrap();
        write_bank(&p, &b).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[10..18].copy_from_slice(&10u64.to_le_bytes());
        assert!(matches!(
            decode_bank(&bytes),
            Err(Error::TruncatedFile { expected: 98, found: 90 })
        ));
    }

    #[test]
    fn bank_rejects_bad_data() {
        assert!(matches!(EmbeddingBank::new(0, vec![]), Err(Error::DimZero)));
        assert!(matches!(EmbeddingBank::new(2, vec![1.0, f32::NAN]), Err(Error::NonFinite { .. })));
        assert!(EmbeddingBank::new(3, vec![1.0; 4]).is_err());
        assert!(matches!(
            EmbeddingBank::from_rows(&[vec![1.0, 2.0], vec![1.0]]),
            Err(Error::DimMismatch { .. })
        ));
    }

    fn write_fixture(dir: &Path) {
        let rows: Vec<Vec<f32>> = (0..8)
            .map(|i| (0..3).map(|j| ((i * 3 + j) as f32).sin() + 1.5).collect())
            .collect();
        write_bank(dir.join("emb.bank"), &EmbeddingBank::from_rows(&rows).unwrap()).unwrap();
    }

    #[test]
    fn load_database_two_candidates() {
        let dir = tmp();
        write_fixture(dir.path());
        let m = dir.path().join("db.jsonl");
        std::fs::write(
            &m,
            concat!(
                "{\"meta\":{\"source\":\"unit\"}}\n",
                "{\"id\":\"b\",\"bank\":\"emb.bank\",\"rows\":[3,4,5]}\n",
                "\n",
                "{\"id\":\"a\",\"bank\":\"emb.bank\",\"rows\":[0,1,2]}\n",
            ),
        )
        .unwrap();
        let db: CandidateDatabase<f32> = load_database(&m, LoadOptions::default()).unwrap();
        assert_eq!(db.len(), 2);
        assert_eq!(db.ids(), ["a", "b"]);
        assert_eq!(db.dim(), 3);
        assert_eq!(db.get("b").unwrap().len(), 3);
        assert_eq!(db.meta()["source"], "unit");
        for (_, set) in db.iter() {
            for p in crate::transport::PointSet::points(set) {
                assert!((p.norm() - 1.0).abs() < 1e-6);
            }
        }
        let raw: CandidateDatabase<f64> =
            load_database(&m, LoadOptions { normalize: false }).unwrap();
        assert!(crate::transport::PointSet::points(raw.get("a").unwrap())[0].norm() > 1.5);
    }

    #[test]
    fn load_database_errors() {
        let dir = tmp();
        write_fixture(dir.path());
        let m = dir.path().join("db.jsonl");
        std::fs::write(
            &m,
            "{\"id\":\"a\",\"bank\":\"emb.bank\",\"rows\":[0]}\n{\"id\":\"a\",\"bank\":\"emb.bank\",\"rows\":[1]}\n",
        )
        .unwrap();
        assert!(matches!(
            load_database::<f32>(&m, LoadOptions::default()),
            Err(Error::DuplicateCandidateId(id)) if id == "a"
        ));
        std::fs::write(&m, "{\"id\":\"a\",\"bank\":\"emb.bank\",\"rows\":[8]}\n").unwrap();
        assert!(matches!(
            load_database::<f32>(&m, LoadOptions::default()),
            Err(Error::RowOutOfRange { row: 8, count: 8, .. })
        ));
        write_bank(dir.path().join("wide.bank"), &EmbeddingBank::new(5, vec![1.0; 5]).unwrap())
            .unwrap();
        std::fs::write(
            &m,
            "{\"id\":\"a\",\"bank\":\"emb.bank\",\"rows\":[0]}\n{\"id\":\"b\",\"bank\":\"wide.bank\",\"rows\":[0]}\n",
        )
        .unwrap();
        assert!(matches!(
            load_database::<f32>(&m, LoadOptions::default()),
            Err(Error::DimMismatchAcrossBanks { expected: 3, found: 5, .. })
        ));
        std::fs::write(&m, "{\"id\":\"a\",\"bank\":\"emb.bank\",\"rows\":[]}\n").unwrap();
        assert!(matches!(
            load_database::<f32>(&m, LoadOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn load_queries_with_and_without_delta() {
        let dir = tmp();
        write_fixture(dir.path());
        let m = dir.path().join("q.jsonl");
        std::fs::write(
            &m,
            concat!(
                "{\"id\":\"q1\",\"bank\":\"emb.bank\",\"caption_rows\":[0,1,2,3,4],\"delta_row\":5}\n",
                "{\"id\":\"q2\",\"bank\":\"emb.bank\",\"caption_rows\":[6],\"reference_row\":7,\"subset\":[\"a\"]}\n",
            ),
        )
        .unwrap();
        let qs: Vec<QueryRecord<f32>> = load_queries(&m, LoadOptions::default()).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].captions.len(), 5);
        assert!(qs[0].delta.is_some());
        assert!(qs[1].delta.is_none());
        assert!(qs[1].reference.is_some());
        assert_eq!(qs[1].subset.as_deref(), Some(&["a".to_string()][..]));
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tmp();
        write_fixture(dir.path());
        let m = dir.path().join("q.jsonl");
        std::fs::write(
            &m,
            "{\"id\":\"q1\",\"bank\":\"emb.bank\",\"caption_rows\":[0]}\n\n{\"id\": oops}\n",
        )
        .unwrap();
        assert!(matches!(
            load_queries::<f32>(&m, LoadOptions::default()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn labels_and_rankings_roundtrip() {
        let dir = tmp();
        let lp = dir.path().join("labels.jsonl");
        let truth = vec![GroundTruth::new("q", vec!["a".into(), "c".into()]).unwrap()];
        write_labels(&lp, &truth).unwrap();
        assert_eq!(load_labels(&lp).unwrap(), truth);

        let r = Ranking {
            query_id: "q".into(),
            entries: vec![
                RankedCandidate { candidate_id: "a".into(), distance: 0.1 + 0.2, score: 0.6 },
                RankedCandidate { candidate_id: "b".into(), distance: 1.0 / 3.0, score: 0.4 },
            ],
            truncated_at: 5,
            pool_size: 2,
            subset: None,
        };
        let rp = dir.path().join("r.jsonl");
        write_rankings(&rp, &[r.clone()]).unwrap();
        assert_eq!(read_rankings(&rp).unwrap(), vec![r]);
    }

    #[test]
    fn empty_positives_rejected() {
        let dir = tmp();
        let lp = dir.path().join("labels.jsonl");
        std::fs::write(&lp, "{\"query_id\":\"q\",\"positives\":[]}\n").unwrap();
        assert!(matches!(load_labels(&lp), Err(Error::Parse { line: 1, .. })));
    }
}
