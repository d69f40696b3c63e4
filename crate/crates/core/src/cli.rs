//! Command-line front end.
//!
//! Every command exits 0 on success. Failures print `error[CODE]: message` on
//! stderr, where `CODE` is [`Error::code`], and exit 1. Argument errors are
//! reported by clap with exit code 2.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::synth::{self, generate_instance, random_workload, SynthParams};
use crate::metrics::{evaluate, GroundTruth, MetricKind, MetricReport};
use crate::retrieval::{QueryRecord, Ranking, Retriever, ScoringConfig, ScoringMode};
use crate::store::{
    self, decode_bank, load_database, load_labels, load_queries, read_jsonl, write_bank,
    CandidateDatabase, DatabaseLine, EmbeddingBank, LoadOptions, QueryRow, BANK_MAGIC,
};

#[derive(Debug, Parser)]
#[command(name = "setret", version, about = "Set-to-set embedding retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-target synthetic instance (banks, manifests, labels).
    Synth(SynthArgs),
    /// Convert float text or bank files into a validated bank; validate manifests.
    Ingest(IngestArgs),
    /// Rank candidates for every query and write JSONL rankings.
    Retrieve(RetrieveArgs),
    /// Compute retrieval metrics from ranking files or synthetic runs.
    Eval(EvalArgs),
    /// Sweep scoring settings and emit long-format CSV.
    Ablate(AblateArgs),
    /// Measure scoring-only latency on random workloads.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ManifestKind {
    Db,
    Queries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

/// Scoring flags shared by every command that ranks candidates.
#[derive(Debug, Clone, Default, Args)]
pub struct ScoringArgs {
    /// `key = value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ct, ot or cosine_mean.
    #[arg(long)]
    pub mode: Option<ScoringMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Transport softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, overrides_with = "no_transition")]
    pub use_transition: bool,
    #[arg(long, overrides_with = "use_transition")]
    pub no_transition: bool,
    /// Sum both transport directions without the 1/K and 1/M weights.
    #[arg(long)]
    pub raw_sum_lbi: bool,
    /// Keep fused captions at their blended length.
    #[arg(long)]
    pub no_renormalize: bool,
    #[arg(long)]
    pub sinkhorn_eps: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    #[arg(long)]
    pub sinkhorn_tol: Option<f64>,
    /// Temperature of the ranking softmax.
    #[arg(long)]
    pub score_temperature: Option<f64>,
}

/// Resolved settings for a ranking run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scoring: ScoringConfig,
    pub workers: usize,
}

const CONFIG_KEYS: &[&str] = &[
    "mode",
    "alpha",
    "tau",
    "use_transition",
    "raw_sum_lbi",
    "renormalize",
    "sinkhorn_eps",
    "sinkhorn_iters",
    "sinkhorn_tol",
    "score_temperature",
    "workers",
];

struct ConfigFile {
    path: PathBuf,
    entries: HashMap<String, (usize, String)>,
}

impl ConfigFile {
    fn empty() -> Self {
        Self { path: PathBuf::new(), entries: HashMap::new() }
    }

    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim().replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(parse_err(format!("unknown key {key:?}")));
            }
            let value = value.trim().trim_matches('"').to_string();
            entries.insert(key, (i + 1, value));
        }
        Ok(Self { path: path.to_path_buf(), entries })
    }

    fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        let Some((line, value)) = self.entries.get(key) else {
            return Ok(None);
        };
        value.parse().map(Some).map_err(|e| Error::Parse {
            path: self.path.clone(),
            line: *line,
            message: format!("{key}: {e}"),
        })
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        let Some((line, value)) = self.entries.get(key) else {
            return Ok(None);
        };
        match value.to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" | "1" => Ok(Some(true)),
            "false" | "off" | "no" | "0" => Ok(Some(false)),
            other => Err(Error::Parse {
                path: self.path.clone(),
                line: *line,
                message: format!("{key}: expected a boolean, got {other:?}"),
            }),
        }
    }
}

impl ScoringArgs {
    /// Merge flags over the config file over built-in defaults.
    pub fn resolve(&self, workers: Option<usize>) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => ConfigFile::read(p)?,
            None => ConfigFile::empty(),
        };
        let d = ScoringConfig::default();
        let use_transition = if self.use_transition {
            true
        } else if self.no_transition {
            false
        } else {
            file.get_bool("use_transition")?.unwrap_or(d.use_transition)
        };
        let renormalize_fusion = if self.no_renormalize {
            false
        } else {
            file.get_bool("renormalize")?.unwrap_or(d.renormalize_fusion)
        };
        let raw_sum_lbi = self.raw_sum_lbi || file.get_bool("raw_sum_lbi")?.unwrap_or(false);
        let scoring = ScoringConfig {
            mode: pick(self.mode, file.get("mode")?, d.mode),
            alpha: pick(self.alpha, file.get("alpha")?, d.alpha),
            tau: pick(self.tau, file.get("tau")?, d.tau),
            use_transition,
            renormalize_fusion,
            raw_sum_lbi,
            sinkhorn: crate::transport::SinkhornParams {
                epsilon: pick(self.sinkhorn_eps, file.get("sinkhorn_eps")?, d.sinkhorn.epsilon),
                max_iters: pick(
                    self.sinkhorn_iters,
                    file.get("sinkhorn_iters")?,
                    d.sinkhorn.max_iters,
                ),
                tol: pick(self.sinkhorn_tol, file.get("sinkhorn_tol")?, d.sinkhorn.tol),
            },
            score_temperature: pick(
                self.score_temperature,
                file.get("score_temperature")?,
                d.score_temperature,
            ),
        };
        scoring.validate()?;
        let workers = pick(workers, file.get("workers")?, 1);
        if workers == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        Ok(RunConfig { scoring, workers })
    }
}

fn pick<V>(flag: Option<V>, file: Option<V>, default: V) -> V {
    flag.or(file).unwrap_or(default)
}

/// Generator settings; the seed is given separately.
#[derive(Debug, Clone, Args)]
pub struct SynthOpts {
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Gallery size per query.
    #[arg(long, default_value_t = 100)]
    pub n_candidates: usize,
    #[arg(long, default_value_t = 200)]
    pub n_queries: usize,
    #[arg(long, default_value_t = 5)]
    pub k_captions: usize,
    #[arg(long, default_value_t = 10)]
    pub m_views: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.8)]
    pub leak: f64,
    #[arg(long, default_value_t = 0.1)]
    pub caption_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub aug_noise: f64,
    #[arg(long, default_value_t = 1)]
    pub positives: usize,
    /// Leave the reference image out of each gallery.
    #[arg(long)]
    pub no_reference_distractor: bool,
}

impl SynthOpts {
    pub fn params(&self, seed: u64) -> SynthParams {
        SynthParams {
            seed,
            dim: self.dim,
            n_candidates: self.n_candidates,
            n_queries: self.n_queries,
            k_captions: self.k_captions,
            m_views: self.m_views,
            beta: self.beta,
            caption_noise: self.caption_noise,
            leak: self.leak,
            aug_noise: self.aug_noise,
            reference_distractor: !self.no_reference_distractor,
            positives: self.positives,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub opts: SynthOpts,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Float text (one row per line, comma or whitespace separated) or a bank file.
    #[arg(long, required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Bank file to write.
    #[arg(long, requires = "input")]
    pub output: Option<PathBuf>,
    /// Manifest to validate against the banks it names.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ManifestKind::Db)]
    pub kind: ManifestKind,
    /// Write the validated manifest here, with bank paths made absolute.
    #[arg(long, requires = "manifest")]
    pub manifest_out: Option<PathBuf>,
    /// Validate rows without normalizing them.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Rankings file (JSONL).
    #[arg(long, short)]
    pub output: PathBuf,
    /// Candidates kept per query.
    #[arg(long, default_value_t = 50)]
    pub top: usize,
    /// Use stored rows as-is instead of normalizing on load.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Rankings file; repeat for several runs.
    #[arg(long = "rankings", required_unless_present = "synth", conflicts_with = "synth")]
    pub rankings: Vec<PathBuf>,
    #[arg(long, required_unless_present = "synth")]
    pub labels: Option<PathBuf>,
    /// Generate, retrieve and score a synthetic instance per seed.
    #[arg(long)]
    pub synth: bool,
    #[arg(long = "seed", value_delimiter = ',', default_value = "7")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// recall, map, subset_recall.
    #[arg(long = "metric", value_delimiter = ',', default_value = "recall")]
    pub metrics: Vec<MetricKind>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub synth_opts: SynthOpts,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Candidate manifest; without it a synthetic instance is generated per seed.
    #[arg(long, requires_all = ["queries", "labels"])]
    pub db: Option<PathBuf>,
    #[arg(long, requires = "db")]
    pub queries: Option<PathBuf>,
    #[arg(long, requires = "db")]
    pub labels: Option<PathBuf>,
    #[arg(long = "seed", value_delimiter = ',', default_value = "7")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<ScoringMode>,
    /// on, off, or both.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub transition: Vec<Toggle>,
    /// Caption counts to keep (first K' per query).
    #[arg(long, value_delimiter = ',')]
    pub k_prime: Vec<usize>,
    /// View counts to keep (first M' per candidate).
    #[arg(long, value_delimiter = ',')]
    pub m_prime: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    #[arg(long = "metric", value_delimiter = ',', default_value = "recall")]
    pub metrics: Vec<MetricKind>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub synth_opts: SynthOpts,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Database sizes to time.
    #[arg(long, value_delimiter = ',', default_value = "10000")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub k_captions: usize,
    #[arg(long, default_value_t = 10)]
    pub m_views: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    /// Worker counts to compare; rankings must agree across all of them.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub workers: Vec<usize>,
    /// Timed queries per setting.
    #[arg(long, default_value_t = 10)]
    pub queries: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(&cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error[{}]: {e}", e.code());
            1
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Ingest(a) => cmd_ingest(a, out),
        Command::Retrieve(a) => cmd_retrieve(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

fn stdout_err(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn check_k_list(k: &[usize]) -> Result<usize> {
    if k.is_empty() || k[0] == 0 || k.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!(
            "k list must be non-empty, positive and strictly ascending, got {k:?}"
        )));
    }
    Ok(*k.last().unwrap())
}

fn check_exists(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::io(*p, io::Error::new(io::ErrorKind::NotFound, "no such file")));
        }
    }
    Ok(())
}

fn load_opts(raw: bool) -> LoadOptions {
    LoadOptions { normalize: !raw }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let inst = generate_instance::<f32>(&a.opts.params(a.seed))?;
    synth::write_instance(&a.out, &inst)?;
    writeln!(
        out,
        "wrote {} queries and {} candidates (dim {}) to {}",
        inst.queries.len(),
        inst.database.len(),
        inst.database.dim(),
        a.out.display()
    )
    .map_err(stdout_err)
}

/// Rows of floats from text, or a bank if the file starts with the bank magic.
pub fn read_float_rows(path: &Path) -> Result<EmbeddingBank> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&BANK_MAGIC) {
        return decode_bank(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("not a bank and not UTF-8 text: {e}"),
    })?;
    let mut width: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: line_no, message };
        let mut row = Vec::new();
        for tok in t.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
            let v: f32 = tok.parse().map_err(|e| parse_err(format!("{tok:?}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {tok:?}")));
            }
            row.push(v);
        }
        match width {
            None => width = Some((row.len(), line_no)),
            Some((w, first)) if w != row.len() => {
                return Err(parse_err(format!(
                    "row has {} values, but line {first} has {w}",
                    row.len()
                )))
            }
            Some(_) => {}
        }
        data.extend(row);
    }
    let Some((dim, _)) = width else {
        return Err(Error::InvalidParameter(format!("{}: no rows", path.display())));
    };
    EmbeddingBank::new(dim as u32, data)
}

pub fn cmd_ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(input) = &a.input {
        let bank = read_float_rows(input)?;
        for i in 0..bank.count() {
            let row = bank.row(i).expect("row index below count");
            let values: Vec<f32> = row.to_vec();
            let checked = if a.raw {
                crate::Embedding::from_raw(values)
            } else {
                crate::Embedding::normalize(&values)
            };
            checked.map_err(|e| Error::InvalidParameter(format!("row {}: {e}", i + 1)))?;
        }
        if let Some(output) = &a.output {
            write_bank(output, &bank)?;
        }
        writeln!(
            out,
            "bank {}: dim {}, count {}",
            a.output.as_deref().unwrap_or(input).display(),
            bank.dim(),
            bank.count()
        )
        .map_err(stdout_err)?;
    }
    if let Some(manifest) = &a.manifest {
        let opts = load_opts(a.raw);
        match a.kind {
            ManifestKind::Db => {
                let db = load_database::<f32>(manifest, opts)?;
                writeln!(
                    out,
                    "manifest {}: {} candidates, dim {}",
                    manifest.display(),
                    db.len(),
                    db.dim()
                )
                .map_err(stdout_err)?;
            }
            ManifestKind::Queries => {
                let qs = load_queries::<f32>(manifest, opts)?;
                let with_delta = qs.iter().filter(|q| q.delta.is_some()).count();
                writeln!(
                    out,
                    "manifest {}: {} queries, {} with transition vectors",
                    manifest.display(),
                    qs.len(),
                    with_delta
                )
                .map_err(stdout_err)?;
            }
        }
        if let Some(dest) = &a.manifest_out {
            rewrite_manifest(manifest, a.kind, dest)?;
        }
    }
    Ok(())
}

fn absolute_bank(base: &Path, rel: &str) -> Result<String> {
    let p = base.join(rel);
    let abs = p.canonicalize().map_err(|e| Error::io(&p, e))?;
    Ok(abs.to_string_lossy().into_owned())
}

fn rewrite_manifest(src: &Path, kind: ManifestKind, dest: &Path) -> Result<()> {
    let base = src.parent().map(Path::to_path_buf).unwrap_or_default();
    match kind {
        ManifestKind::Db => {
            let mut rows = Vec::new();
            for (_, row) in read_jsonl::<DatabaseLine>(src)? {
                rows.push(match row {
                    DatabaseLine::Candidate(mut c) => {
                        c.bank = absolute_bank(&base, &c.bank)?;
                        DatabaseLine::Candidate(c)
                    }
                    meta => meta,
                });
            }
            store::write_jsonl(dest, rows)
        }
        ManifestKind::Queries => {
            let mut rows: Vec<QueryRow> = Vec::new();
            for (_, mut row) in read_jsonl::<QueryRow>(src)? {
                row.bank = absolute_bank(&base, &row.bank)?;
                rows.push(row);
            }
            store::write_jsonl(dest, rows)
        }
    }
}

pub fn cmd_retrieve(a: &RetrieveArgs, out: &mut dyn Write) -> Result<()> {
    check_exists(&[&a.db, &a.queries])?;
    if a.top == 0 {
        return Err(Error::InvalidParameter("--top must be at least 1".into()));
    }
    let cfg = a.scoring.resolve(a.workers)?;
    let db = load_database::<f32>(&a.db, load_opts(a.raw))?;
    let queries = load_queries::<f32>(&a.queries, load_opts(a.raw))?;
    let retriever = Retriever::new(cfg.workers)?;
    let rankings = retriever.retrieve_all(&queries, &db, &cfg.scoring, a.top)?;
    store::write_rankings(&a.output, &rankings)?;
    writeln!(
        out,
        "wrote {} rankings (mode {}, top {}) to {}",
        rankings.len(),
        cfg.scoring.mode,
        a.top,
        a.output.display()
    )
    .map_err(stdout_err)
}

/// One evaluation unit: rankings from a file, or a synthetic instance.
struct Run {
    label: String,
    queries: Vec<QueryRecord<f32>>,
    db: Option<CandidateDatabase<f32>>,
    truth: Vec<GroundTruth>,
    rankings: Vec<Ranking>,
}

fn synth_run(seed: u64, opts: &SynthOpts) -> Result<Run> {
    let inst = generate_instance::<f32>(&opts.params(seed))?;
    Ok(Run {
        label: format!("seed={seed}"),
        queries: inst.queries,
        db: Some(inst.database),
        truth: inst.truth,
        rankings: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize)]
struct MetricRow {
    run: String,
    metric: &'static str,
    k: usize,
    value: f64,
    n_queries: usize,
}

impl MetricRow {
    fn new(run: &str, r: &MetricReport) -> Self {
        Self { run: run.to_string(), metric: r.metric.name(), k: r.k, value: r.value, n_queries: r.n_queries }
    }
}

fn score_all(
    rankings: &[Ranking],
    truth: &[GroundTruth],
    metrics: &[MetricKind],
    ks: &[usize],
) -> Result<Vec<MetricReport>> {
    let mut out = Vec::with_capacity(metrics.len() * ks.len());
    for &m in metrics {
        for &k in ks {
            out.push(evaluate(m, rankings, truth, k)?);
        }
    }
    Ok(out)
}

/// Per-run rows followed by mean rows when there is more than one run.
fn metric_rows(runs: &[(String, Vec<MetricReport>)]) -> Vec<MetricRow> {
    let mut rows: Vec<MetricRow> =
        runs.iter().flat_map(|(label, reps)| reps.iter().map(|r| MetricRow::new(label, r))).collect();
    if runs.len() > 1 {
        let n = runs.len() as f64;
        for (i, r) in runs[0].1.iter().enumerate() {
            let value = runs.iter().map(|(_, reps)| reps[i].value).sum::<f64>() / n;
            let n_queries = runs.iter().map(|(_, reps)| reps[i].n_queries).sum();
            rows.push(MetricRow { run: "mean".into(), metric: r.metric.name(), k: r.k, value, n_queries });
        }
    }
    rows
}

fn open_output<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))),
        None => Ok(Box::new(stdout)),
    }
}

/// Right-aligned plain-text table.
fn write_table(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    writeln!(out, "{}", line(header.to_vec()))?;
    for row in rows {
        writeln!(out, "{}", line(row.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

fn write_csv(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

fn write_jsonl_rows<S: Serialize>(out: &mut dyn Write, rows: &[S]) -> io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *out, row)?;
        writeln!(out)?;
    }
    Ok(())
}

fn emit_metric_rows(out: &mut dyn Write, format: Format, rows: &[MetricRow]) -> io::Result<()> {
    const HEADER: [&str; 5] = ["run", "metric", "k", "value", "n_queries"];
    let cells = |precise: bool| -> Vec<Vec<String>> {
        rows.iter()
            .map(|r| {
                let value = if precise { r.value.to_string() } else { format!("{:.4}", r.value) };
                vec![r.run.clone(), r.metric.to_string(), r.k.to_string(), value, r.n_queries.to_string()]
            })
            .collect()
    };
    match format {
        Format::Table => write_table(out, &HEADER, &cells(false)),
        Format::Csv => write_csv(out, &HEADER, &cells(true)),
        Format::Jsonl => write_jsonl_rows(out, rows),
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let top = check_k_list(&a.k)?;
    let mut runs = Vec::new();
    if a.synth {
        let cfg = a.scoring.resolve(a.workers)?;
        let retriever = Retriever::new(cfg.workers)?;
        for &seed in &a.seeds {
            let mut run = synth_run(seed, &a.synth_opts)?;
            let db = run.db.as_ref().expect("synthetic runs carry a database");
            run.rankings = retriever.retrieve_all(&run.queries, db, &cfg.scoring, top)?;
            runs.push(run);
        }
    } else {
        let labels = a.labels.as_deref().expect("clap requires labels without --synth");
        let mut paths: Vec<&Path> = a.rankings.iter().map(PathBuf::as_path).collect();
        paths.push(labels);
        check_exists(&paths)?;
        let truth = load_labels(labels)?;
        for p in &a.rankings {
            runs.push(Run {
                label: p.display().to_string(),
                queries: Vec::new(),
                db: None,
                truth: truth.clone(),
                rankings: store::read_rankings(p)?,
            });
        }
    }
    let mut reports = Vec::with_capacity(runs.len());
    for run in &runs {
        reports.push((run.label.clone(), score_all(&run.rankings, &run.truth, &a.metrics, &a.k)?));
    }
    let rows = metric_rows(&reports);
    let mut dest = open_output(a.output.as_deref(), out)?;
    emit_metric_rows(&mut *dest, a.format, &rows).map_err(stdout_err)?;
    dest.flush().map_err(stdout_err)
}

#[derive(Debug, Clone, Copy)]
struct Setting {
    mode: ScoringMode,
    transition: bool,
    alpha: f64,
    tau: f64,
    k_prime: Option<usize>,
    m_prime: Option<usize>,
}

fn or_single<V: Copy>(list: &[V], single: V) -> Vec<V> {
    if list.is_empty() {
        vec![single]
    } else {
        list.to_vec()
    }
}

fn optional_list(list: &[usize]) -> Vec<Option<usize>> {
    if list.is_empty() {
        vec![None]
    } else {
        list.iter().copied().map(Some).collect()
    }
}

pub const ABLATE_HEADER: [&str; 11] = [
    "run", "mode", "transition", "alpha", "tau", "k_prime", "m_prime", "metric", "k", "value",
    "n_queries",
];

pub fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let top = check_k_list(&a.k)?;
    let base = a.scoring.resolve(a.workers)?;
    let toggles: Vec<bool> = if a.transition.is_empty() {
        vec![base.scoring.use_transition]
    } else {
        a.transition.iter().map(|t| *t == Toggle::On).collect()
    };
    let mut settings = Vec::new();
    for m_prime in optional_list(&a.m_prime) {
        for k_prime in optional_list(&a.k_prime) {
            for &mode in &or_single(&a.modes, base.scoring.mode) {
                for &transition in &toggles {
                    for &alpha in &or_single(&a.alphas, base.scoring.alpha) {
                        for &tau in &or_single(&a.taus, base.scoring.tau) {
                            settings.push(Setting { mode, transition, alpha, tau, k_prime, m_prime });
                        }
                    }
                }
            }
        }
    }
    for s in &settings {
        if s.k_prime == Some(0) || s.m_prime == Some(0) {
            return Err(Error::InvalidParameter("k_prime and m_prime must be positive".into()));
        }
        ScoringConfig { mode: s.mode, alpha: s.alpha, tau: s.tau, ..base.scoring }.validate()?;
    }

    let mut runs = Vec::new();
    if let Some(db_path) = &a.db {
        let (qp, lp) = (a.queries.as_deref().unwrap(), a.labels.as_deref().unwrap());
        check_exists(&[db_path, qp, lp])?;
        runs.push(Run {
            label: db_path.display().to_string(),
            queries: load_queries(qp, load_opts(a.raw))?,
            db: Some(load_database(db_path, load_opts(a.raw))?),
            truth: load_labels(lp)?,
            rankings: Vec::new(),
        });
    } else {
        for &seed in &a.seeds {
            runs.push(synth_run(seed, &a.synth_opts)?);
        }
    }

    let retriever = Retriever::new(base.workers)?;
    // results[setting][run]
    let mut results: Vec<Vec<Vec<MetricReport>>> = vec![Vec::new(); settings.len()];
    for run in &runs {
        let full_db = run.db.as_ref().expect("ablation runs carry a database");
        let mut dbs: BTreeMap<Option<usize>, CandidateDatabase<f32>> = BTreeMap::new();
        let mut qsets: BTreeMap<Option<usize>, Vec<QueryRecord<f32>>> = BTreeMap::new();
        for (si, s) in settings.iter().enumerate() {
            if !dbs.contains_key(&s.m_prime) {
                let db = match s.m_prime {
                    None => full_db.clone(),
                    Some(m) => {
                        let have = full_db.iter().map(|(_, t)| t.len()).min().unwrap_or(0);
                        if m > have {
                            return Err(Error::InvalidParameter(format!(
                                "m_prime {m} exceeds the {have} views available"
                            )));
                        }
                        full_db.with_point_prefix(m)?
                    }
                };
                dbs.insert(s.m_prime, db);
            }
            if !qsets.contains_key(&s.k_prime) {
                let qs = match s.k_prime {
                    None => run.queries.clone(),
                    Some(k) => run
                        .queries
                        .iter()
                        .map(|q| {
                            if k > q.captions.len() {
                                return Err(Error::InvalidParameter(format!(
                                    "k_prime {k} exceeds the {} captions of query {}",
                                    q.captions.len(),
                                    q.id
                                )));
                            }
                            q.with_caption_prefix(k)
                        })
                        .collect::<Result<Vec<_>>>()?,
                };
                qsets.insert(s.k_prime, qs);
            }
            let cfg = ScoringConfig {
                mode: s.mode,
                alpha: s.alpha,
                tau: s.tau,
                use_transition: s.transition,
                ..base.scoring
            };
            let rankings = retriever.retrieve_all(&qsets[&s.k_prime], &dbs[&s.m_prime], &cfg, top)?;
            results[si].push(score_all(&rankings, &run.truth, &a.metrics, &a.k)?);
        }
    }

    let fmt_opt = |v: Option<usize>| v.map_or_else(|| "all".to_string(), |x| x.to_string());
    let mut rows = Vec::new();
    for (si, s) in settings.iter().enumerate() {
        let per_run: Vec<(String, Vec<MetricReport>)> =
            runs.iter().map(|r| r.label.clone()).zip(results[si].iter().cloned()).collect();
        for m in metric_rows(&per_run) {
            rows.push(vec![
                m.run,
                s.mode.to_string(),
                if s.transition { "on" } else { "off" }.to_string(),
                s.alpha.to_string(),
                s.tau.to_string(),
                fmt_opt(s.k_prime),
                fmt_opt(s.m_prime),
                m.metric.to_string(),
                m.k.to_string(),
                m.value.to_string(),
                m.n_queries.to_string(),
            ]);
        }
    }
    let mut dest = open_output(a.output.as_deref(), out)?;
    write_csv(&mut *dest, &ABLATE_HEADER, &rows).map_err(stdout_err)?;
    dest.flush().map_err(stdout_err)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub workers: usize,
    pub queries: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub wall_s: f64,
    pub identical: bool,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Latency floor: the reference workload must score in under this many seconds.
pub const FLOOR_SECONDS: f64 = 2.0;

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.queries == 0 || a.top == 0 || a.n.is_empty() || a.workers.is_empty() {
        return Err(Error::InvalidParameter("bench sizes and lists must be non-empty and positive".into()));
    }
    let cfg = a.scoring.resolve(None)?.scoring;
    let mut rows = Vec::new();
    for &n in &a.n {
        let (queries, db) = random_workload::<f32>(a.seed, n, a.queries, a.k_captions, a.m_views, a.dim)?;
        let mut baseline: Option<Vec<Ranking>> = None;
        for &w in &a.workers {
            let retriever = Retriever::new(w)?;
            retriever.retrieve(&queries[0], &db, &cfg, a.top)?;
            let mut latencies = Vec::with_capacity(queries.len());
            let mut rankings = Vec::with_capacity(queries.len());
            let wall = Instant::now();
            for q in &queries {
                let t = Instant::now();
                rankings.push(retriever.retrieve(q, &db, &cfg, a.top)?);
                latencies.push(t.elapsed().as_secs_f64());
            }
            let wall_s = wall.elapsed().as_secs_f64();
            let identical = match &baseline {
                None => {
                    baseline = Some(rankings);
                    true
                }
                Some(b) => *b == rankings,
            };
            let mean_s = latencies.iter().sum::<f64>() / latencies.len() as f64;
            latencies.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                n,
                workers: w,
                queries: queries.len(),
                mean_s,
                p50_s: percentile(&latencies, 0.5),
                p95_s: percentile(&latencies, 0.95),
                wall_s,
                identical,
            });
        }
    }

    const HEADER: [&str; 8] = ["n", "workers", "queries", "mean_s", "p50_s", "p95_s", "wall_s", "identical"];
    let cells = |precise: bool| -> Vec<Vec<String>> {
        let f = |v: f64| if precise { v.to_string() } else { format!("{v:.4}") };
        rows.iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.workers.to_string(),
                    r.queries.to_string(),
                    f(r.mean_s),
                    f(r.p50_s),
                    f(r.p95_s),
                    f(r.wall_s),
                    r.identical.to_string(),
                ]
            })
            .collect()
    };
    let res = match a.format {
        Format::Table => write_table(out, &HEADER, &cells(false)),
        Format::Csv => write_csv(out, &HEADER, &cells(true)),
        Format::Jsonl => write_jsonl_rows(out, &rows),
    };
    res.map_err(stdout_err)?;

    if a.format == Format::Table {
        let reference = a.k_captions == 5 && a.m_views == 10 && a.dim == 512 && cfg.mode == ScoringMode::Ct;
        for r in rows.iter().filter(|r| reference && r.n == 10_000 && r.workers == 1) {
            let verdict = if r.mean_s < FLOOR_SECONDS { "PASS" } else { "FAIL" };
            writeln!(out, "floor: N=10000 K=5 M=10 d=512 single worker, mean {:.4} s < {FLOOR_SECONDS} s: {verdict}", r.mean_s)
                .map_err(stdout_err)?;
        }
        let first_w = a.workers[0];
        let per_n: Vec<&BenchRow> = rows.iter().filter(|r| r.workers == first_w).collect();
        if per_n.len() > 1 {
            for pair in per_n.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let ratio = (hi.mean_s / hi.n as f64) / (lo.mean_s / lo.n as f64);
                writeln!(out, "scaling: per-candidate latency n={} vs n={}: ratio {ratio:.3}", hi.n, lo.n)
                    .map_err(stdout_err)?;
            }
        }
    }
    if rows.iter().any(|r| !r.identical) {
        return Err(Error::InvalidParameter("rankings differ across worker counts".into()));
    }
    Ok(())
}
