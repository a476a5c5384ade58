use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pairalign::archive::{load_archive, rank_query};
use pairalign::decode::{ScriptedEntry, ScriptedTable, PROVIDER_SCHEMA};
use pairalign::evalsuite::consistency_report;
use pairalign::quantizer::Codebook;
use pairalign::{paf, Alphabet, Matrix, TokenSequence};
use serde_json::Value;
use tempfile::TempDir;

fn pairalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairalign"))
        .current_dir(dir)
        .env_remove("PAIRALIGN_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("headline is JSON")
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn codebook(dir: &Path) {
    let centroids = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    Codebook::with_defaults(centroids).unwrap().save(dir.join("cb.paf")).unwrap();
}

#[test]
fn tokenize_single_frame_at_centroid() {
    let d = TempDir::new().unwrap();
    codebook(d.path());
    fs::create_dir(d.path().join("feats")).unwrap();
    paf::save(d.path().join("feats/a.paf"), &Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
    let head = ok(&pairalign(d.path(), &["tokenize", "feats", "--codebook", "cb.paf", "--out", "o"]));
    assert_eq!(head["files"], 1);
    assert_eq!(read_json(d.path().join("o/a.json")), serde_json::json!([1]));
}

#[test]
fn tokenize_dedup_collapses_runs() {
    let d = TempDir::new().unwrap();
    codebook(d.path());
    let frames = [[0.1, 0.0], [0.0, 0.1], [0.9, 0.0], [1.1, 0.1], [0.0, 0.9], [0.0, 0.0]];
    let z = Matrix::from_rows(&frames.iter().map(|f| f.to_vec()).collect::<Vec<_>>()).unwrap();
    paf::save(d.path().join("x.paf"), &z).unwrap();
    ok(&pairalign(d.path(), &["tokenize", "x.paf", "--codebook", "cb.paf", "--out", "raw"]));
    ok(&pairalign(d.path(), &["tokenize", "x.paf", "--codebook", "cb.paf", "--dedup", "--out", "dd"]));
    assert_eq!(read_json(d.path().join("raw/x.json")), serde_json::json!([0, 0, 1, 1, 2, 0]));
    assert_eq!(read_json(d.path().join("dd/x.json")), serde_json::json!([0, 1, 2, 0]));
}

#[test]
fn tokenize_empty_directory_and_failures() {
    let d = TempDir::new().unwrap();
    codebook(d.path());
    fs::create_dir(d.path().join("empty")).unwrap();
    let head = ok(&pairalign(d.path(), &["tokenize", "empty", "--codebook", "cb.paf", "--out", "o"]));
    assert_eq!(head["files"], 0);

    let missing = pairalign(d.path(), &["tokenize", "empty", "--codebook", "nope.paf"]);
    assert_eq!(missing.status.code(), Some(2));

    write(d.path(), "bad.paf", "not a matrix");
    let bad = pairalign(d.path(), &["tokenize", "bad.paf", "--codebook", "cb.paf", "--out", "o"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.paf"));
}

fn pair_fixture(dir: &Path, pairs: &[(&[u32], &[u32])]) {
    let mut manifest = String::from("anchor,positive\n");
    for (i, (a, p)) in pairs.iter().enumerate() {
        write(dir, &format!("a{i}.json"), &serde_json::to_string(a).unwrap());
        write(dir, &format!("p{i}.json"), &serde_json::to_string(p).unwrap());
        manifest.push_str(&format!("a{i}.json,p{i}.json\n"));
    }
    write(dir, "pairs.csv", &manifest);
}

#[test]
fn eval_identical_pairs() {
    let d = TempDir::new().unwrap();
    pair_fixture(d.path(), &[(&[1, 2, 3], &[1, 2, 3]), (&[4, 4], &[4, 4])]);
    let head = ok(&pairalign(d.path(), &["eval", "pairs.csv", "--out", "o"]));
    assert_eq!(head["exact_match_rate"], 1.0);
    let report = read_json(d.path().join("o/eval.json"));
    assert_eq!(report["schema"], "pairalign-eval/1");
    assert_eq!(report["consistency"]["exact_match_rate"], 1.0);
    assert_eq!(report["consistency"]["mean_similarity"], 1.0);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn eval_matches_library() {
    let d = TempDir::new().unwrap();
    let pairs: [(&[u32], &[u32]); 3] = [(&[1, 2, 3], &[1, 2, 4]), (&[5, 5, 5, 5, 5, 6], &[5, 6]), (&[], &[7])];
    pair_fixture(d.path(), &pairs);
    ok(&pairalign(d.path(), &["eval", "pairs.csv", "--out", "o"]));
    let report = read_json(d.path().join("o/eval.json"));

    let ab = Alphabet::with_size(512).unwrap();
    let seqs: Vec<(TokenSequence, TokenSequence)> = pairs
        .iter()
        .map(|(a, p)| (TokenSequence::new(a.to_vec(), ab).unwrap(), TokenSequence::new(p.to_vec(), ab).unwrap()))
        .collect();
    let expected = consistency_report(&seqs).unwrap();
    let c = &report["consistency"];
    assert_eq!(c["mean_similarity"].as_f64().unwrap(), expected.mean_similarity);
    assert_eq!(c["mean_jaccard"].as_f64().unwrap(), expected.mean_jaccard);
    assert_eq!(c["mean_deletions"].as_f64().unwrap(), expected.mean_deletions);
    // [5,5,5,5,5,6] has unique ratio 2/6 > 0.2, so nothing collapses here.
    assert_eq!(report["collapse"]["collapsed_pair_rate"], 0.0);
    let rows = fs::read_to_string(d.path().join("o/eval_pairs.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
}

#[test]
fn eval_missing_file_and_ragged_manifest() {
    let d = TempDir::new().unwrap();
    pair_fixture(d.path(), &[(&[1], &[1])]);
    fs::remove_file(d.path().join("p0.json")).unwrap();
    assert_eq!(pairalign(d.path(), &["eval", "pairs.csv", "--out", "o"]).status.code(), Some(3));

    write(d.path(), "p0.json", "[1]");
    write(d.path(), "ragged.csv", "anchor,positive\na0.json,p0.json,extra\n");
    assert_eq!(pairalign(d.path(), &["eval", "ragged.csv", "--out", "o"]).status.code(), Some(3));
}

fn golden_archive(dir: &Path) {
    write(dir, "t0.json", "[1,2,3,4]");
    write(dir, "t1.json", "[1,2,3,5]");
    write(dir, "t2.json", "[9,9]");
    write(
        dir,
        "segments.csv",
        "segment_id,source_id,start_s,end_s,tokens,phonemes\n\
         s0,A,0.0,3.0,t0.json,h e l o\n\
         s1,A,1.5,4.5,t1.json,h e l o\n\
         s2,B,0.0,3.0,t2.json,b a\n",
    );
    ok(&pairalign(dir, &["build-archive", "segments.csv", "--tokenizer", "demo", "--out", "arch"]));
}

#[test]
fn retrieve_matches_archive_ranking() {
    let d = TempDir::new().unwrap();
    golden_archive(d.path());
    write(d.path(), "q.json", "[1,2,3,5]");
    write(d.path(), "queries.csv", "query_id,tokens,segment_id\nq,q.json,s1\n");
    let head = ok(&pairalign(
        d.path(),
        &["retrieve", "--archive", "arch/archive.jsonl", "--queries", "queries.csv", "--out", "r"],
    ));
    assert_eq!(head["mrr"], 1.0);

    let archive = load_archive(d.path().join("arch/archive.jsonl")).unwrap();
    let q = TokenSequence::new(vec![1, 2, 3, 5], *archive.alphabet()).unwrap();
    let expected: Vec<(String, f64)> = rank_query(&q, &archive, 1)
        .unwrap()
        .into_iter()
        .map(|(i, dist)| (archive.entries()[i].segment_id.clone(), dist))
        .collect();
    let csv = fs::read_to_string(d.path().join("r/rankings.csv")).unwrap();
    let got: Vec<(String, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].to_string(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(got, expected);
    assert_eq!(got[0], ("s1".to_string(), 0.0));
}

#[test]
fn retrieve_report_independent_of_threads() {
    let d = TempDir::new().unwrap();
    golden_archive(d.path());
    write(d.path(), "q.json", "[1,2,3]");
    write(d.path(), "queries.csv", "query_id,tokens,segment_id\nq,q.json,s0\n");
    let base = ["retrieve", "--archive", "arch/archive.jsonl", "--queries", "queries.csv"];
    ok(&pairalign(d.path(), &[&base[..], &["--threads", "1", "--out", "t1"]].concat()));
    ok(&pairalign(d.path(), &[&base[..], &["--threads", "3", "--out", "t3"]].concat()));
    for f in ["retrieve.json", "rankings.csv", "retrieval_queries.csv"] {
        assert_eq!(
            fs::read(d.path().join("t1").join(f)).unwrap(),
            fs::read(d.path().join("t3").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn build_archive_rejects_bad_window() {
    let d = TempDir::new().unwrap();
    write(d.path(), "t.json", "[1]");
    write(d.path(), "segments.csv", "segment_id,source_id,start_s,end_s,tokens\ns,A,0.0,2.0,t.json\n");
    assert_eq!(pairalign(d.path(), &["build-archive", "segments.csv", "--out", "o"]).status.code(), Some(3));
}

#[test]
fn sweep_constant_windows() {
    let d = TempDir::new().unwrap();
    write(d.path(), "w.json", "[[3,1,2],[3,1,2],[3,1,2]]");
    let head = ok(&pairalign(d.path(), &["sweep", "w.json", "--out", "o"]));
    assert_eq!(head["mean_similarity"], 1.0);
    let report = read_json(d.path().join("o/sweep.json"));
    assert_eq!(report["sweep"]["similarity"]["mean"], 1.0);
    assert_eq!(report["tokens_per_second"], 1.0);
}

#[test]
fn timing_single_token_covers_window() {
    let d = TempDir::new().unwrap();
    paf::save(d.path().join("w.paf"), &Matrix::from_rows(&[vec![0.1, 0.5, 0.2, 0.2]]).unwrap()).unwrap();
    write(d.path(), "tok.json", "[7]");
    let head = ok(&pairalign(
        d.path(),
        &["timing", "--matrix", "w.paf", "--tokens", "tok.json", "--win-start", "1.0", "--out", "o"],
    ));
    assert_eq!(head["tokens"], 1);
    let report = read_json(d.path().join("o/timing.json"));
    let iv = &report["intervals"][0];
    assert!((iv["start_s"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((iv["end_s"].as_f64().unwrap() - 1.08).abs() < 1e-12);
}

#[test]
fn timing_more_tokens_than_frames_is_infeasible() {
    let d = TempDir::new().unwrap();
    let w = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    paf::save(d.path().join("w.paf"), &w).unwrap();
    write(d.path(), "tok.json", "[1,2]");
    let out = pairalign(d.path(), &["timing", "--matrix", "w.paf", "--tokens", "tok.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn timing_from_attention_manifest() {
    let d = TempDir::new().unwrap();
    // K = 4: BOS 4, EOS 5. Decoder rows: BOS, 1, 2, EOS.
    let head = Matrix::from_rows(&[
        vec![0.25, 0.25, 0.25, 0.25],
        vec![0.7, 0.2, 0.05, 0.05],
        vec![0.05, 0.05, 0.2, 0.7],
        vec![0.25, 0.25, 0.25, 0.25],
    ])
    .unwrap();
    paf::save(d.path().join("h0.paf"), &head).unwrap();
    write(d.path(), "m.json", r#"{"H":1,"T_dec":4,"T_enc":4,"layer":-1,"files":["h0.paf"]}"#);
    write(d.path(), "tok.json", "[4,1,2,5]");
    write(d.path(), "cfg.json", r#"{"alphabet":{"size":4,"bos":4,"eos":5,"pad":6,"mask":7}}"#);
    ok(&pairalign(
        d.path(),
        &["--config", "cfg.json", "timing", "--attention", "m.json", "--tokens", "tok.json", "--out", "o"],
    ));
    let report = read_json(d.path().join("o/timing.json"));
    assert_eq!(report["path"], serde_json::json!([0, 0, 1, 1]));
}

fn provider(dir: &Path) {
    let table = ScriptedTable {
        schema: PROVIDER_SCHEMA.into(),
        vocab: 7,
        default: Some(vec![0.5, 0.2, 0.1, 0.0, 0.0, 0.3, 0.0]),
        entries: vec![ScriptedEntry {
            condition: Some("loud".into()),
            prefix: vec![3],
            logits: vec![2.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0],
        }],
    };
    write(dir, "prov.json", &serde_json::to_string(&table).unwrap());
}

#[test]
fn decode_is_reproducible_per_seed() {
    let d = TempDir::new().unwrap();
    provider(d.path());
    let run = |out: &str, seed: &str| {
        ok(&pairalign(
            d.path(),
            &["decode", "--provider", "prov.json", "--condition", "loud", "--condition", "soft", "--t-cond", "40", "--seed", seed, "--out", out],
        ));
        fs::read(d.path().join(out).join("decode.json")).unwrap()
    };
    assert_eq!(run("a", "11"), run("b", "11"));
    let report: Value = serde_json::from_slice(&run("c", "11")).unwrap();
    for o in report["outputs"].as_array().unwrap() {
        let toks = o["tokens"].as_array().unwrap();
        assert_eq!(toks[0], 3);
        assert_eq!(toks.iter().filter(|t| **t == 4).count(), 1);
        assert_eq!(*toks.last().unwrap(), 4);
    }
}

#[test]
fn decode_beam_pads_to_length() {
    let d = TempDir::new().unwrap();
    provider(d.path());
    write(d.path(), "cfg.json", r#"{"beam":{"beam_size":2,"l_max":6,"l_min":2,"rho":0.15,"gamma_rep":1.2}}"#);
    let out = pairalign(d.path(), &["--config", "cfg.json", "decode", "--provider", "prov.json", "--beam", "--out", "o"]);
    // The configured 512-symbol alphabet disagrees with the 3-symbol provider.
    assert_eq!(out.status.code(), Some(2));

    write(
        d.path(),
        "cfg.json",
        r#"{"alphabet":{"size":3,"bos":3,"eos":4,"pad":5,"mask":6},
            "beam":{"beam_size":2,"l_max":6,"l_min":2,"rho":0.15,"gamma_rep":1.2}}"#,
    );
    ok(&pairalign(d.path(), &["--config", "cfg.json", "decode", "--provider", "prov.json", "--beam", "--out", "o"]));
    let report = read_json(d.path().join("o/decode.json"));
    assert_eq!(report["outputs"][0]["tokens"].as_array().unwrap().len(), 7);
}

#[test]
fn bad_config_exits_two() {
    let d = TempDir::new().unwrap();
    write(d.path(), "cfg.json", r#"{"unknown_key": 1}"#);
    write(d.path(), "w.json", "[[1],[1]]");
    let out = pairalign(d.path(), &["--config", "cfg.json", "sweep", "w.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pairalign(d.path(), &["--config", "missing.json", "sweep", "w.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let d = TempDir::new().unwrap();
    pair_fixture(d.path(), &[(&[1, 2, 3, 3], &[1, 2, 4]), (&[6, 6, 6, 6, 6, 6], &[6])]);
    ok(&pairalign(d.path(), &["eval", "pairs.csv", "--out", "x"]));
    ok(&pairalign(d.path(), &["eval", "pairs.csv", "--out", "y"]));
    for f in ["eval.json", "eval_pairs.csv", "eval_positions.csv", "eval_bins.csv"] {
        assert_eq!(fs::read(d.path().join("x").join(f)).unwrap(), fs::read(d.path().join("y").join(f)).unwrap());
    }
}
