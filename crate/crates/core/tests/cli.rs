use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;
use setret::harness::SynthRng;
use setret::store::{read_bank, read_rankings, write_bank};
use setret::EmbeddingBank;

fn setret(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setret")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = setret(args);
    assert!(
        out.status.success(),
        "setret {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = setret(args);
    assert_eq!(out.status.code(), Some(1), "setret {args:?} should fail with exit 1");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--n-queries", "20", "--n-candidates", "30", "--dim", "16"];

fn small_synth(dir: &Path) {
    let mut args = vec!["synth", "--out", s(dir)];
    args.extend(SMALL);
    ok(&args);
}

fn write_lines(path: &Path, rows: &[serde_json::Value]) {
    let text: String = rows.iter().map(|r| r.to_string() + "\n").collect();
    fs::write(path, text).unwrap();
}

#[test]
fn ingest_csv_into_a_bank() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let mut rng = SynthRng::new(3);
    let text: String = (0..10)
        .map(|_| (0..8).map(|_| format!("{:.6}", rng.gaussian())).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(&csv, text).unwrap();
    let bank = dir.path().join("rows.bank");
    let stdout = ok(&["ingest", "--input", s(&csv), "--output", s(&bank)]);
    assert!(stdout.contains("dim 8, count 10"), "{stdout}");
    let b = read_bank(&bank).unwrap();
    assert_eq!((b.dim(), b.count()), (8, 10));

    // a bank is accepted as input too
    let copy = dir.path().join("copy.bank");
    ok(&["ingest", "--input", s(&bank), "--output", s(&copy)]);
    assert_eq!(fs::read(&bank).unwrap(), fs::read(&copy).unwrap());
}

#[test]
fn ingest_rejects_empty_and_ragged_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let err = fails(&["ingest", "--input", s(&empty)]);
    assert!(err.contains("no rows"), "{err}");

    let ragged = dir.path().join("ragged.txt");
    fs::write(&ragged, "1 2 3\n4 5 6\n7 8\n").unwrap();
    let err = fails(&["ingest", "--input", s(&ragged)]);
    assert!(err.starts_with("error[ParseError]"), "{err}");
    assert!(err.contains(":3:"), "{err}");
}

#[test]
fn ingest_validates_and_rewrites_manifests() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let db = dir.path().join("db.jsonl");
    let stdout = ok(&["ingest", "--manifest", s(&db)]);
    assert!(stdout.contains("600 candidates, dim 16"), "{stdout}");
    let q = dir.path().join("queries.jsonl");
    let stdout = ok(&["ingest", "--manifest", s(&q), "--kind", "queries"]);
    assert!(stdout.contains("20 queries, 20 with transition vectors"), "{stdout}");

    let elsewhere = tempfile::tempdir().unwrap();
    let moved = elsewhere.path().join("db.jsonl");
    ok(&["ingest", "--manifest", s(&db), "--manifest-out", s(&moved)]);
    let stdout = ok(&["ingest", "--manifest", s(&moved)]);
    assert!(stdout.contains("600 candidates"), "{stdout}");
}

#[test]
fn retrieve_writes_one_ranking_per_query_in_each_mode() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let (db, q) = (dir.path().join("db.jsonl"), dir.path().join("queries.jsonl"));
    for mode in ["ct", "ot", "cosine_mean"] {
        let out = dir.path().join(format!("{mode}.jsonl"));
        ok(&["retrieve", "--db", s(&db), "--queries", s(&q), "-o", s(&out), "--mode", mode, "--top", "10"]);
        let rankings = read_rankings(&out).unwrap();
        assert_eq!(rankings.len(), 20);
        assert!(rankings.iter().all(|r| r.entries.len() == 10 && r.pool_size == 30));
        let text = fs::read_to_string(&out).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["query_id", "candidates", "distances", "scores"] {
            assert!(first.get(key).is_some(), "{key} missing");
        }
    }
}

#[test]
fn retrieve_without_delta_reports_missing_delta() {
    let dir = tempfile::tempdir().unwrap();
    let bank = EmbeddingBank::new(2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]).unwrap();
    write_bank(dir.path().join("e.bank"), &bank).unwrap();
    let db = dir.path().join("db.jsonl");
    write_lines(&db, &[json!({"id": "a", "bank": "e.bank", "rows": [0, 1]}), json!({"id": "b", "bank": "e.bank", "rows": [2]})]);
    let q = dir.path().join("q.jsonl");
    write_lines(&q, &[json!({"id": "q0", "bank": "e.bank", "caption_rows": [0, 2]})]);
    let out = dir.path().join("r.jsonl");

    let err = fails(&["retrieve", "--db", s(&db), "--queries", s(&q), "-o", s(&out), "--use-transition"]);
    assert!(err.starts_with("error[MissingDelta]"), "{err}");
    ok(&["retrieve", "--db", s(&db), "--queries", s(&q), "-o", s(&out), "--no-transition"]);
    assert_eq!(read_rankings(&out).unwrap()[0].entries.len(), 2);
}

fn ranking_row(query: &str, candidates: &[String]) -> serde_json::Value {
    let n = candidates.len();
    json!({
        "query_id": query,
        "candidates": candidates,
        "distances": (0..n).map(|i| i as f64).collect::<Vec<_>>(),
        "scores": vec![1.0 / n as f64; n],
        "k": n,
        "pool_size": n,
    })
}

/// Rankings over `n` candidates per query, with the positive at `rank(q)`.
fn write_eval_files(dir: &Path, queries: usize, n: usize, mut rank: impl FnMut(usize) -> usize) -> (String, String) {
    let (mut rankings, mut labels) = (Vec::new(), Vec::new());
    for q in 0..queries {
        let qid = format!("q{q}");
        let ids: Vec<String> = (0..n).map(|i| format!("{qid}-c{i}")).collect();
        labels.push(json!({"query_id": qid, "positives": [ids[rank(q)].clone()]}));
        rankings.push(ranking_row(&qid, &ids));
    }
    let (r, l) = (dir.join("rankings.jsonl"), dir.join("labels.jsonl"));
    write_lines(&r, &rankings);
    write_lines(&l, &labels);
    (s(&r).to_string(), s(&l).to_string())
}

fn csv_value(stdout: &str, metric: &str, k: &str) -> f64 {
    let mut reader = csv::Reader::from_reader(stdout.as_bytes());
    for rec in reader.records() {
        let rec = rec.unwrap();
        if &rec[1] == metric && &rec[2] == k {
            return rec[3].parse().unwrap();
        }
    }
    panic!("no {metric}@{k} row in {stdout}");
}

#[test]
fn eval_perfect_rankings() {
    let dir = tempfile::tempdir().unwrap();
    let (r, l) = write_eval_files(dir.path(), 5, 8, |_| 0);
    let stdout = ok(&["eval", "--rankings", &r, "--labels", &l, "--k", "1", "--metric", "recall,map", "--format", "csv"]);
    assert_eq!(csv_value(&stdout, "recall", "1"), 1.0);
    assert_eq!(csv_value(&stdout, "map", "1"), 1.0);
}

#[test]
fn eval_random_rankings_recall_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let (queries, n) = (2_000, 100);
    let mut rng = SynthRng::new(77);
    let (r, l) = write_eval_files(dir.path(), queries, n, |_| rng.below(n));
    let stdout = ok(&["eval", "--rankings", &r, "--labels", &l, "--k", "1", "--format", "csv"]);
    let recall = csv_value(&stdout, "recall", "1");
    let p = 1.0 / n as f64;
    let sigma = (p * (1.0 - p) / queries as f64).sqrt();
    assert!((recall - p).abs() <= 3.0 * sigma, "R@1 {recall}, expected {p} +- {}", 3.0 * sigma);
}

#[test]
fn eval_fails_on_unlabelled_query() {
    let dir = tempfile::tempdir().unwrap();
    let (r, l) = write_eval_files(dir.path(), 3, 4, |_| 0);
    let labels = fs::read_to_string(&l).unwrap();
    fs::write(&l, labels.lines().take(2).collect::<Vec<_>>().join("\n")).unwrap();
    let err = fails(&["eval", "--rankings", &r, "--labels", &l, "--k", "1"]);
    assert!(err.starts_with("error[MissingTruth]"), "{err}");
}

#[test]
fn eval_over_seeds_reports_each_and_the_mean() {
    let mut args = vec!["eval", "--synth", "--seed", "7", "--seed", "8", "--k", "1,5", "--format", "jsonl"];
    args.extend(SMALL);
    let stdout = ok(&args);
    let rows: Vec<serde_json::Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let runs: Vec<&str> = rows.iter().map(|r| r["run"].as_str().unwrap()).collect();
    assert_eq!(runs, ["seed=7", "seed=7", "seed=8", "seed=8", "mean", "mean"]);
    let mean = rows[4]["value"].as_f64().unwrap();
    let expected = (rows[0]["value"].as_f64().unwrap() + rows[2]["value"].as_f64().unwrap()) / 2.0;
    assert!((mean - expected).abs() < 1e-15);
}

fn ablate(extra: &[&str]) -> Vec<csv::StringRecord> {
    let mut args = vec!["ablate"];
    args.extend(SMALL);
    args.extend(extra);
    let stdout = ok(&args);
    let mut reader = csv::Reader::from_reader(stdout.as_bytes());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["run", "mode", "transition", "alpha", "tau", "k_prime", "m_prime", "metric", "k", "value", "n_queries"]
    );
    reader.records().map(Result::unwrap).collect()
}

#[test]
fn ablate_alpha_sweep_gives_three_rows_per_metric() {
    let rows = ablate(&["--alphas", "0,0.45,1", "--k", "1", "--metric", "recall,map"]);
    assert_eq!(rows.len(), 6);
    for metric in ["recall", "map"] {
        let alphas: Vec<&str> = rows.iter().filter(|r| &r[7] == metric).map(|r| &r[3]).collect();
        assert_eq!(alphas, ["0", "0.45", "1"]);
    }
}

#[test]
fn ablate_caption_and_view_subsampling() {
    let rows = ablate(&["--k-prime", "1,5", "--m-prime", "2", "--k", "1"]);
    let kp: Vec<&str> = rows.iter().map(|r| &r[5]).collect();
    assert_eq!(kp, ["1", "5"]);
    assert!(rows.iter().all(|r| &r[6] == "2"));
    let err = fails(&["ablate", "--n-queries", "2", "--n-candidates", "3", "--k", "1", "--k-prime", "6"]);
    assert!(err.contains("k_prime 6"), "{err}");
}

#[test]
fn ablate_transition_and_transport_grid() {
    let rows = ablate(&["--modes", "ct,cosine_mean", "--transition", "on,off", "--k", "1", "--seed", "7,8"]);
    let mean: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[0] == "mean").collect();
    assert_eq!(mean.len(), 4);
    assert_eq!(rows.len(), 12);
    let value = |mode: &str, t: &str| -> f64 {
        mean.iter().find(|r| &r[1] == mode && &r[2] == t).unwrap()[9].parse().unwrap()
    };
    assert!(value("ct", "on") > value("ct", "off"));
    assert!(value("cosine_mean", "on") > value("cosine_mean", "off"));
}

#[test]
fn bench_smoke() {
    let stdout = ok(&["bench", "--n", "300,600", "--dim", "32", "--queries", "3", "--workers", "1,2"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].contains("mean_s") && lines[0].contains("p95_s"));
    assert_eq!(lines.iter().filter(|l| l.trim_end().ends_with("true")).count(), 4);
    assert!(stdout.contains("scaling:"));
    let stdout = ok(&["bench", "--n", "200", "--dim", "8", "--queries", "2", "--format", "csv"]);
    assert!(stdout.starts_with("n,workers,queries,mean_s,p50_s,p95_s,wall_s,identical"));
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "mode = cosine_mean\nuse_transition = false\n").unwrap();
    let (db, q) = (dir.path().join("db.jsonl"), dir.path().join("queries.jsonl"));
    let from_conf = dir.path().join("a.jsonl");
    let stdout = ok(&["retrieve", "--db", s(&db), "--queries", s(&q), "-o", s(&from_conf), "--config", s(&conf)]);
    assert!(stdout.contains("mode cosine_mean"), "{stdout}");
    let explicit = dir.path().join("b.jsonl");
    ok(&["retrieve", "--db", s(&db), "--queries", s(&q), "-o", s(&explicit), "--mode", "cosine_mean", "--no-transition"]);
    assert_eq!(fs::read(&from_conf).unwrap(), fs::read(&explicit).unwrap());

    let flagged = dir.path().join("c.jsonl");
    let stdout = ok(&["retrieve", "--db", s(&db), "--queries", s(&q), "-o", s(&flagged), "--config", s(&conf), "--mode", "ct"]);
    assert!(stdout.contains("mode ct"), "{stdout}");
}

#[test]
fn bad_arguments_and_missing_files() {
    let out = setret(&["retrieve", "--db", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = fails(&["retrieve", "--db", "/nonexistent/db.jsonl", "--queries", "q", "-o", "o"]);
    assert!(err.starts_with("error[Io]"), "{err}");
    let err = fails(&["eval", "--synth", "--k", "5,1", "--n-queries", "2"]);
    assert!(err.starts_with("error[InvalidParameter]"), "{err}");
}
