#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memscope::ngram::write_corpus;
use rand::Rng;

pub const FIXTURE_VOCAB: u32 = 2000;
pub const SENTENCES: usize = 200;
pub const SENTENCE_LEN: usize = 48;
pub const NOISE_DOCS: usize = 40;
pub const NOISE_LEN: usize = 400;

pub fn memscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memscope"))
        .args(args)
        .output()
        .expect("failed to launch memscope")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// `n` random sentences over `[lo, hi)` with pairwise distinct 8-token
/// prefixes.
pub fn unique_sentences<R: Rng>(rng: &mut R, n: usize, len: usize, lo: u32, hi: u32) -> Vec<Vec<u32>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let sent: Vec<u32> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
        if seen.insert(sent[..8.min(len)].to_vec()) {
            out.push(sent);
        }
    }
    out
}

/// Random binary documents; every short context over {0, 1} has several
/// successors, so generation from them is ambiguous.
pub fn binary_noise<R: Rng>(rng: &mut R, n: usize, len: usize) -> Vec<Vec<u32>> {
    (0..n).map(|_| (0..len).map(|_| rng.gen_range(0..2)).collect()).collect()
}

/// Training corpus: unique sentences over `[2, FIXTURE_VOCAB)` followed by
/// binary noise documents.
pub fn fixture_docs<R: Rng>(rng: &mut R) -> Vec<Vec<u32>> {
    let mut docs = unique_sentences(rng, SENTENCES, SENTENCE_LEN, 2, FIXTURE_VOCAB);
    docs.extend(binary_noise(rng, NOISE_DOCS, NOISE_LEN));
    docs
}

pub fn write_fixture_corpus<R: Rng>(rng: &mut R, dir: &Path) -> PathBuf {
    let path = dir.join("corpus.bin");
    write_corpus(&path, &fixture_docs(rng), FIXTURE_VOCAB).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let o = memscope(args);
    assert!(o.status.success(), "memscope {args:?} failed: {}", stderr(&o));
}

/// Runs every subcommand on `corpus`, chaining outputs, under `out`.
pub fn run_pipeline(corpus: &Path, out: &Path, threads: usize) {
    let t = threads.to_string();
    let d = |name: &str| out.join(name);
    let common = |dir: &Path| vec!["--threads".to_string(), t.clone(), "--out".into(), s(dir).into()];
    let go = |dir: PathBuf, args: &[&str]| {
        let mut v: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        v.extend(common(&dir));
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        run_ok(&refs);
    };
    let c = s(corpus);
    go(d("counts"), &["ngram-count", "--corpus", c, "--order", "1"]);
    go(d("counts"), &["ngram-count", "--corpus", c, "--order", "2", "--spill-budget", "500"]);
    go(d("counts"), &["ngram-count", "--corpus", c, "--order", "3"]);
    let uni = d("counts").join("counts_order1.ngct");
    let bi = d("counts").join("counts_order2.ngct");
    let tri = d("counts").join("counts_order3.ngct");

    go(d("toy8"), &["toy-fit", "--corpus", c, "--max-order", "8"]);
    go(d("toy2"), &["toy-fit", "--corpus", c, "--max-order", "2"]);
    let m8 = d("toy8").join("toy_model.json");
    let m2 = d("toy2").join("toy_model.json");
    go(d("big"), &["toy-trace", "--model", s(&m8), "--corpus", c, "--label", "toy-8"]);
    go(d("small"), &["toy-trace", "--model", s(&m2), "--corpus", c, "--label", "toy-2"]);
    let big = d("big").join("traces.jsonl");
    let small = d("small").join("traces.jsonl");
    let (big, small) = (s(&big).to_string(), s(&small).to_string());

    go(d("score"), &["score", "--traces", &small, &big, "--bin-width", "0.1"]);
    go(d("transition"), &["transition", "--traces", &small, &big]);
    go(d("position"), &["position-hist", "--traces", &big, "--parts", "10", "--filter", "full"]);
    go(d("profile"), &["ngram-profile", "--traces", &big, "--counter", s(&bi)]);
    go(d("profile-gen"), &["ngram-profile", "--traces", &small, "--counter", s(&tri), "--source", "generated"]);
    go(d("gram1"), &["gram-stats", "--traces", &big, &small, "--counter", s(&uni)]);
    go(d("gram3"), &["gram-stats", "--traces", &big, "--counter", s(&tri)]);
    go(d("entropy"), &["entropy-profile", "--traces", &small, &big]);
    go(d("geometry"), &["embed-geometry", "--traces", &big]);
    go(d("predictor"), &["predict-train", "--traces", &big, "--counter", s(&uni), "--epochs", "2"]);
    let mprd = d("predictor").join("predictor.mprd");
    go(d("predict-eval"), &["predict-eval", "--traces", &small, &big, "--counter", s(&uni), "--model", s(&mprd)]);
    go(d("grad"), &["grad-check", "--samples", "16", "--steps", "3"]);
    go(
        d("report"),
        &["report", "--traces", &small, &big, "--counter", s(&uni), "--model", s(&mprd), "--parts", "5"],
    );
}

/// Relative path → contents of every file under `root`.
pub fn snapshot_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
