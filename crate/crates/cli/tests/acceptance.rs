//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when an
//! earlier criterion fails; the process exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use memscope::dynamics::{
    entropy_profile, group_centroids, pairwise_geometry, pca_project, shannon_entropy,
};
use memscope::dynamics::geometry::euclidean;
use memscope::ngram::{count_ngrams, count_ngrams_sharded, merge_counters, sequence_gram_stats, Ngram};
use memscope::predictor::synthetic::entropy_threshold_dataset;
use memscope::predictor::{
    accuracy_report, evaluate, grad_check, train, FeatureSequence, PredictorModel, TrainConfig, Trainer,
};
use memscope::scoring::{
    histogram_by_bin, memorization_score, trace_score, transition_matrix, Cohort, MemorizationBinning,
    MemorizationScore,
};
use memscope::toy::{eval_sequences, fit_trie, make_traces, EvalSequence};
use memscope::trace::{validate_trace, GenerationTrace, ModelMeta, TraceRecord, TraceSet};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, took: Duration, what: &str) -> Result<(), String> {
    ensure(took < limit, || format!("{what} took {took:.2?}, limit {limit:?}"))
}

fn trace(id: String, index: u64, ctx: Vec<u32>, truth: Vec<u32>, gen: Vec<u32>, vocab: u32, emb: Option<Vec<Vec<f64>>>) -> GenerationTrace {
    let n = truth.len();
    let hidden = emb.as_ref().map_or(1, |e| e[0].len());
    validate_trace(TraceRecord {
        schema_version: 1,
        sequence_id: id,
        corpus_index: index,
        model: ModelMeta::new("acc", vocab, hidden),
        context: ctx,
        true_continuation: truth,
        generated_continuation: gen,
        step_entropy: vec![0.0; n],
        step_embedding: emb,
        context_entropy: None,
        decode_mode: "greedy".into(),
    })
    .expect("fixture trace is valid")
}

/// A trace whose first `matches` continuation tokens are reproduced.
fn scored_trace(i: usize, matches: usize, len: usize) -> GenerationTrace {
    let truth = vec![1; len];
    let gen = (0..len).map(|p| if p < matches { 1 } else { 2 }).collect();
    trace(format!("s{i}"), i as u64, vec![0], truth, gen, 4, None)
}

// Scoring

fn scoring_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    for case in 0..10_000 {
        let len = rng.gen_range(1..=64);
        let vocab = [2u32, 3, 8, 100][case % 4];
        let a: Vec<u32> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let b: Vec<u32> = if case % 10 == 0 { a.clone() } else { (0..len).map(|_| rng.gen_range(0..vocab)).collect() };
        let mut brute = 0u32;
        for p in 0..len {
            if a[p] == b[p] {
                brute += 1;
            }
        }
        let s = memorization_score(&a, &b).map_err(|e| e.to_string())?;
        ensure(s.matches() == brute && s.length() == len as u32, || format!("case {case}: {s} vs {brute}/{len}"))?;
        ensure(s.value() == f64::from(brute) / len as f64, || format!("case {case}: value {}", s.value()))?;
    }
    let took = start.elapsed();
    within(Duration::from_secs(5), took, "10,000 pairs")?;
    Ok(format!("10,000 pairs exact in {took:.2?}"))
}

fn binning_totals() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for set_no in 0..1000 {
        let len = rng.gen_range(1..=64);
        let n = rng.gen_range(1..=60);
        let mut traces: Vec<GenerationTrace> = (0..n).map(|i| scored_trace(i, rng.gen_range(0..=len), len)).collect();
        traces.push(scored_trace(n, len, len));
        let set = TraceSet::new(traces).unwrap();
        for scheme in [MemorizationBinning::tenths(), MemorizationBinning::fifths()] {
            let bins = scheme.num_bins();
            let h = histogram_by_bin(&set, scheme).map_err(|e| e.to_string())?;
            // Oracle: largest b with b/bins ≤ m/len, capped to the top bin.
            let mut expected = vec![0u64; bins];
            for t in &set {
                let m = t.matched_tokens();
                let b = (0..bins).filter(|&b| b * len <= m * bins).max().unwrap().min(bins - 1);
                expected[b] += 1;
            }
            ensure(h.counts == expected, || format!("set {set_no}: {:?} vs {expected:?}", h.counts))?;
            ensure(h.total() == set.len() as u64, || format!("set {set_no}: total {}", h.total()))?;
            ensure(scheme.bin_index(MemorizationScore::new(len as u32, len as u32)) == bins - 1, || {
                format!("set {set_no}: score 1 outside top bin")
            })?;
        }
    }
    Ok("1,000 sets partition exactly under both widths; 1.0 in top bin".into())
}

fn transition_sanity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for inst in 0..100 {
        let len = rng.gen_range(1..=64u32);
        let n = rng.gen_range(1..=300);
        let x: BTreeMap<String, MemorizationScore> =
            (0..n).map(|i| (format!("q{i}"), MemorizationScore::new(rng.gen_range(0..=len), len))).collect();
        let y: BTreeMap<String, MemorizationScore> =
            x.keys().map(|k| (k.clone(), MemorizationScore::new(rng.gen_range(0..=len), len))).collect();
        for scheme in [MemorizationBinning::tenths(), MemorizationBinning::fifths()] {
            let same = transition_matrix(&x, &x, scheme).map_err(|e| e.to_string())?;
            for (a, row) in same.counts.iter().enumerate() {
                for (b, &c) in row.iter().enumerate() {
                    ensure(a == b || c == 0, || format!("instance {inst}: off-diagonal ({a},{b}) = {c}"))?;
                }
            }
            let m = transition_matrix(&x, &y, scheme).map_err(|e| e.to_string())?;
            for (r, row) in m.row_normalized.iter().enumerate() {
                if m.counts[r].iter().sum::<u64>() > 0 {
                    let s: f64 = row.iter().sum();
                    ensure((s - 1.0).abs() <= 1e-9, || format!("instance {inst}: row {r} sums to {s}"))?;
                }
            }
        }
    }
    Ok("100 instances: self-transition diagonal, non-empty rows sum to 1 within 1e-9".into())
}

// N-grams

fn ngram_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let start = Instant::now();
    let mut tokens_total = 0usize;
    for corpus_no in 0..50 {
        let vocab = [2u32, 16, 1000, 50_000][corpus_no % 4];
        let budget = rng.gen_range(1..=100_000usize);
        let mut docs = Vec::new();
        let mut used = 0;
        while used < budget {
            let len = rng.gen_range(0..=2000).min(budget - used);
            docs.push((0..len).map(|_| rng.gen_range(0..vocab)).collect::<Vec<u32>>());
            used += len.max(1);
        }
        tokens_total += docs.iter().map(Vec::len).sum::<usize>();
        for order in 1..=3 {
            let mut naive: HashMap<Vec<u32>, u64> = HashMap::new();
            for d in &docs {
                if d.len() >= order {
                    for w in d.windows(order) {
                        *naive.entry(w.to_vec()).or_default() += 1;
                    }
                }
            }
            let c = count_ngrams(&docs, order, vocab).map_err(|e| e.to_string())?;
            let got: HashMap<Vec<u32>, u64> = c
                .sorted_entries()
                .into_iter()
                .map(|(k, n)| (Ngram::unpack(k, order).unwrap().tokens().to_vec(), n))
                .collect();
            ensure(got == naive, || format!("corpus {corpus_no}, order {order}: counts differ from naive"))?;
            let shards = rng.gen_range(2..=8);
            let sharded = count_ngrams_sharded(&docs, order, vocab, shards).map_err(|e| e.to_string())?;
            ensure(sharded.sorted_entries() == c.sorted_entries(), || {
                format!("corpus {corpus_no}, order {order}: {shards} shards differ")
            })?;
            let mid = docs.len() / 2;
            let merged = merge_counters(
                count_ngrams(&docs[..mid], order, vocab).unwrap(),
                count_ngrams(&docs[mid..], order, vocab).unwrap(),
            )
            .map_err(|e| e.to_string())?;
            ensure(merged.sorted_entries() == c.sorted_entries(), || {
                format!("corpus {corpus_no}, order {order}: merged halves differ")
            })?;
        }
    }
    let took = start.elapsed();
    within(Duration::from_secs(30), took, "50 corpora")?;
    Ok(format!("50 corpora ({tokens_total} tokens), orders 1-3 exact, sharded = merged = single pass, {took:.2?}"))
}

fn boundary_effect() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let vocab = 1000u32;
    // Tokens 0..20 are frequent, 500..1000 occur once each.
    let mut docs: Vec<Vec<u32>> = (0..200).map(|_| (0..100).map(|_| rng.gen_range(0..20)).collect()).collect();
    docs.push((500..1000).collect());
    let counter = count_ngrams(&docs, 1, vocab).map_err(|e| e.to_string())?;

    let mut traces = Vec::new();
    for i in 0..100 {
        let memorized = i % 2 == 0;
        let mut ctx: Vec<u32> = (0..32).map(|_| rng.gen_range(20..500)).collect();
        let mut truth: Vec<u32> = (0..16).map(|_| rng.gen_range(20..500)).collect();
        let (last, first) = if memorized {
            (rng.gen_range(500..1000), rng.gen_range(0..20))
        } else {
            (rng.gen_range(0..20), rng.gen_range(500..1000))
        };
        ctx[31] = last;
        truth[0] = first;
        let gen = if memorized { truth.clone() } else { truth.iter().map(|t| (t + 1) % vocab).collect() };
        traces.push(trace(format!("b{i}"), i, ctx, truth, gen, vocab, None));
    }
    let set = TraceSet::new(traces).unwrap();
    let mem = sequence_gram_stats(&Cohort::Memorized.select(&set), &counter, "memorized").map_err(|e| e.to_string())?;
    let unmem =
        sequence_gram_stats(&Cohort::Unmemorized.select(&set), &counter, "unmemorized").map_err(|e| e.to_string())?;
    ensure(mem.traces == 50 && unmem.traces == 50, || "cohort sizes".into())?;
    ensure(mem.boundary_diff > 0.0, || format!("memorized boundary_diff {}", mem.boundary_diff))?;
    ensure(unmem.boundary_diff < 0.0, || format!("unmemorized boundary_diff {}", unmem.boundary_diff))?;
    let took = start.elapsed();
    within(Duration::from_secs(10), took, "boundary fixture")?;
    Ok(format!(
        "boundary_diff memorized {:+.3}, unmemorized {:+.3}, {took:.2?}",
        mem.boundary_diff, unmem.boundary_diff
    ))
}

// Dynamics

fn entropy() -> Verdict {
    for v in [2usize, 10, 1024] {
        let h = shannon_entropy(&vec![1.0 / v as f64; v]).map_err(|e| e.to_string())?;
        ensure((h - (v as f64).ln()).abs() <= 1e-9, || format!("uniform V={v}: {h}"))?;
    }
    ensure(shannon_entropy(&[0.0, 1.0, 0.0]).unwrap() == 0.0, || "one-hot entropy is not 0".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let docs = common::fixture_docs(&mut rng);
    let model = fit_trie(&docs, 8, common::FIXTURE_VOCAB, 16).map_err(|e| e.to_string())?;
    let mut eval = eval_sequences(&docs[..common::SENTENCES]);
    for (i, tokens) in common::binary_noise(&mut rng, 100, 48).into_iter().enumerate() {
        eval.push(EvalSequence {
            sequence_id: format!("noise-{i:03}"),
            corpus_index: (common::SENTENCES + i) as u64,
            tokens,
        });
    }
    let set = make_traces(&model, &eval, 32, 16, "toy").map_err(|e| e.to_string())?;
    let memorized = Cohort::Memorized.select(&set);
    let rest = set.filter(|t| !trace_score(t).is_full());
    ensure(memorized.len() == common::SENTENCES, || format!("{} memorized traces", memorized.len()))?;
    let pm = entropy_profile(&memorized, "memorized", false).map_err(|e| e.to_string())?;
    let pr = entropy_profile(&rest, "ambiguous", false).map_err(|e| e.to_string())?;
    ensure(pm.per_index_mean_entropy.iter().all(|&e| e == 0.0), || format!("memorized profile {:?}", pm.per_index_mean_entropy))?;
    for (i, (m, r)) in pm.per_index_mean_entropy.iter().zip(&pr.per_index_mean_entropy).enumerate() {
        ensure(m < r, || format!("index {i}: memorized {m} not below {r}"))?;
    }
    let min_rest = pr.per_index_mean_entropy.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "ln V within 1e-9, one-hot 0; memorized cohort ({}) 0 at all 16 steps, ambiguous cohort ({}) >= {min_rest:.3} nats",
        memorized.len(),
        rest.len()
    ))
}

/// Cyclic Jacobi eigensolver for a symmetric matrix; returns pairs sorted
/// by descending eigenvalue.
fn jacobi_eigen(a: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|j| (m[j][j], v.iter().map(|row| row[j]).collect())).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, vec) in pairs.iter_mut() {
        let mut best = 0;
        for i in 1..vec.len() {
            if vec[i].abs() > vec[best].abs() {
                best = i;
            }
        }
        if vec[best] < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
    }
    pairs
}

fn centered(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = data.len() as f64;
    let d = data[0].len();
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    data.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rank2_error(data: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
    data.iter()
        .map(|x| {
            let mut r = x.clone();
            for b in basis {
                let p = dot(x, b);
                r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= p * bi);
            }
            dot(&r, &r)
        })
        .sum()
}

fn pca() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst_proj = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut iters = 0usize;
    for trial in 0..100 {
        let d = rng.gen_range(2..=16);
        let n = rng.gen_range(d + 2..=60);
        let scales: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..3.0)).collect();
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| scales.iter().map(|s| s * rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let fit = pca_project(&data, 2).map_err(|e| format!("trial {trial}: {e}"))?;
        iters = iters.max(*fit.iterations.iter().max().unwrap());

        let c = centered(&data);
        let mut cov = vec![vec![0.0; d]; d];
        for row in &c {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += row[i] * row[j] / (n - 1) as f64;
                }
            }
        }
        let oracle = jacobi_eigen(&cov);
        for (row, got) in c.iter().zip(&fit.coords) {
            for k in 0..2 {
                let want = dot(row, &oracle[k].1);
                worst_proj = worst_proj.max((want - got[k]).abs());
            }
        }

        let best = rank2_error(&c, &fit.components);
        // For d = 2 both errors are rounding noise around zero.
        let slack = 1e-12 * c.iter().map(|r| dot(r, r)).sum::<f64>();
        for _ in 0..100 {
            let mut u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nu = dot(&u, &u).sqrt();
            u.iter_mut().for_each(|x| *x /= nu);
            let mut w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = dot(&w, &u);
            w.iter_mut().zip(&u).for_each(|(x, y)| *x -= p * y);
            let nw = dot(&w, &w).sqrt();
            w.iter_mut().for_each(|x| *x /= nw);
            let random = rank2_error(&c, &[u, w]);
            ensure(best <= random + slack, || format!("trial {trial}: PCA error {best} > random {random}"))?;
        }

        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let moved: Vec<Vec<f64>> = data.iter().map(|r| r.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
        let fit2 = pca_project(&moved, 2).map_err(|e| e.to_string())?;
        for (a, b) in fit.coords.iter().zip(&fit2.coords) {
            for k in 0..2 {
                worst_shift = worst_shift.max((a[k] - b[k]).abs());
            }
        }
    }
    ensure(worst_proj <= 1e-6, || format!("projection differs from dense eigensolver by {worst_proj:e}"))?;
    ensure(worst_shift <= 1e-9, || format!("mean shift changed coordinates by {worst_shift:e}"))?;
    Ok(format!(
        "100 matrices: max projection error {worst_proj:.1e}, mean-shift drift {worst_shift:.1e}, PCA beats 10,000 random planes, max {iters} iterations"
    ))
}

fn geometry() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let u = Uniform::new_inclusive(-1.0, 1.0);
    for _ in 0..1000 {
        let d = rng.gen_range(1..=16);
        let mut v = || (0..d).map(|_| u.sample(&mut rng) * 5.0).collect::<Vec<f64>>();
        let (a, b, c) = (v(), v(), v());
        let (ab, bc, ac) = (euclidean(&a, &b), euclidean(&b, &c), euclidean(&a, &c));
        // Collinear triples (always so for d = 1) hit equality, where the
        // sum can round one ulp below the direct distance.
        ensure(ac <= (ab + bc) * (1.0 + 4.0 * f64::EPSILON), || format!("triangle violated: {ac} > {ab} + {bc}"))?;
    }

    let len = 8;
    let hidden = 6;
    let mut traces = Vec::new();
    let mut singles = BTreeMap::new();
    for i in 0..60 {
        let matches = if i < 9 { i } else { rng.gen_range(0..=len) };
        let emb: Vec<Vec<f64>> = (0..len).map(|_| (0..hidden).map(|_| u.sample(&mut rng)).collect()).collect();
        if i < 9 {
            singles.insert(matches, emb.clone());
        }
        let truth = vec![1; len];
        let gen = (0..len).map(|p| if p < matches { 1 } else { 2 }).collect();
        traces.push(trace(format!("g{i:02}"), 0, vec![0], truth, gen, 4, Some(emb)));
    }
    // The first nine traces cover every match count; keep only those for the
    // singleton check.
    let single_set = TraceSet::new(traces[..9].to_vec()).unwrap();
    let cs = group_centroids(&single_set).map_err(|e| e.to_string())?;
    for (k, g) in &cs.groups {
        ensure(g.members == 1 && g.steps == singles[k], || format!("singleton group {k} differs from its member"))?;
    }

    let set = TraceSet::new(traces).unwrap();
    let cents = group_centroids(&set).map_err(|e| e.to_string())?;
    let report = pairwise_geometry(&cents).map_err(|e| e.to_string())?;
    for (s, step) in report.steps.iter().enumerate() {
        let g = step.cosine.len();
        for i in 0..g {
            ensure(step.cosine[i][i] == Some(1.0), || format!("step {s}: diagonal {:?}", step.cosine[i][i]))?;
            for j in 0..g {
                let c = step.cosine[i][j].ok_or("undefined cosine")?;
                ensure((-1.0..=1.0).contains(&c), || format!("cosine {c} out of range"))?;
                ensure(step.cosine[i][j] == step.cosine[j][i], || "cosine not symmetric".into())?;
                ensure(step.euclidean[i][j] == step.euclidean[j][i], || "distance not symmetric".into())?;
            }
        }
    }
    Ok(format!(
        "1,000 triangle triples hold; {} groups x {} steps symmetric with unit diagonal; singletons exact",
        report.keys.len(),
        report.steps.len()
    ))
}

// Toy backend

fn toy_memorization() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let train_docs = common::unique_sentences(&mut rng, 200, 48, 0, 5000);
    let disjoint = common::unique_sentences(&mut rng, 200, 48, 5000, 10_000);
    let model = fit_trie(&train_docs, 8, 10_000, 16).map_err(|e| e.to_string())?;
    let seen = make_traces(&model, &eval_sequences(&train_docs), 32, 16, "toy").map_err(|e| e.to_string())?;
    let unseen = make_traces(&model, &eval_sequences(&disjoint), 32, 16, "toy").map_err(|e| e.to_string())?;
    let full = seen.iter().filter(|t| trace_score(t).is_full()).count();
    let zero = unseen.iter().filter(|t| trace_score(t).is_zero()).count();
    let hist = histogram_by_bin(&seen, MemorizationBinning::tenths()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(full == 200, || format!("{full}/200 in-corpus traces score 1.0"))?;
    ensure(zero == 200, || format!("{zero}/200 disjoint traces score 0.0"))?;
    ensure(hist.counts[9] == 200, || format!("histogram {:?}", hist.counts))?;
    within(Duration::from_secs(10), took, "fit -> trace -> score -> histogram")?;
    Ok(format!("200/200 in-corpus at 1.0, 200/200 disjoint at 0.0, pipeline {took:.2?}"))
}

// Predictor

fn predictor_gradients() -> Verdict {
    let data = entropy_threshold_dataset(4, 8, 16, 110);
    let batch: Vec<&FeatureSequence> = data.iter().collect();
    let config = TrainConfig::default();
    let model = PredictorModel::init(data[0].dim(), config.architecture, 110).map_err(|e| e.to_string())?;
    let before = grad_check(&model, &batch, 1e-5).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, config);
    for _ in 0..10 {
        trainer.step(&batch).map_err(|e| e.to_string())?;
    }
    let after = grad_check(&trainer.model, &batch, 1e-5).map_err(|e| e.to_string())?;
    ensure(before.max_relative_error <= 1e-4, || format!("at init: {before:?}"))?;
    ensure(after.max_relative_error <= 1e-4, || format!("after 10 steps: {after:?}"))?;
    Ok(format!(
        "max relative error {:.2e} at init, {:.2e} after 10 steps ({} parameters checked)",
        before.max_relative_error, after.max_relative_error, before.checked
    ))
}

fn predictor_learnability() -> Verdict {
    let data = entropy_threshold_dataset(600, 16, 16, 111);
    let (train_set, held_out) = data.split_at(500);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let config = TrainConfig { epochs: 20, seed: 111, ..TrainConfig::default() };
    let start = Instant::now();
    let out = pool.install(|| train(train_set, &config)).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let r = evaluate(&out.model, held_out, MemorizationBinning::tenths()).map_err(|e| e.to_string())?;
    ensure(r.token_accuracy >= 0.95, || format!("token accuracy {}", r.token_accuracy))?;
    ensure(r.full_accuracy <= r.token_accuracy, || format!("full {} > token {}", r.full_accuracy, r.token_accuracy))?;
    within(Duration::from_secs(60), took, "training")?;
    Ok(format!(
        "held-out token {:.4}, full {:.4}; training {took:.2?} single-threaded",
        r.token_accuracy, r.full_accuracy
    ))
}

fn metric_identities() -> Verdict {
    let scheme = MemorizationBinning::tenths();
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    for set in 0..100 {
        let n = rng.gen_range(1..=50);
        let p = rng.gen_range(0.0..1.0);
        let gold: Vec<Vec<bool>> =
            (0..n).map(|_| (0..rng.gen_range(1..=64)).map(|_| rng.gen_bool(p)).collect()).collect();
        let same = accuracy_report(&gold, &gold, scheme).map_err(|e| e.to_string())?;
        ensure(same.token_accuracy == 1.0, || format!("set {set}: gold vs gold {}", same.token_accuracy))?;
        let ones: Vec<Vec<bool>> = gold.iter().map(|g| vec![true; g.len()]).collect();
        let r = accuracy_report(&gold, &ones, scheme).map_err(|e| e.to_string())?;
        let pos = gold.iter().flatten().filter(|&&x| x).count();
        let total = gold.iter().map(Vec::len).sum::<usize>();
        ensure(r.token_accuracy == pos as f64 / total as f64, || {
            format!("set {set}: all-ones {} vs fraction {pos}/{total}", r.token_accuracy)
        })?;
    }
    let case = accuracy_report(&[vec![true, true, false, false]], &[vec![true, false, false, false]], scheme)
        .map_err(|e| e.to_string())?;
    ensure(case.token_accuracy == 0.75 && case.full_accuracy == 0.0, || {
        format!("MMUU vs MUUU: token {} full {}", case.token_accuracy, case.full_accuracy)
    })?;
    Ok("identity 1.0; MMUU vs MUUU token 0.75 full 0; all-ones = positive fraction on 100 datasets".into())
}

// CLI

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let corpus = common::write_fixture_corpus(&mut rng, dir.path());
    let one = dir.path().join("t1");
    let eight = dir.path().join("t8");
    common::run_pipeline(&corpus, &one, 1);
    common::run_pipeline(&corpus, &eight, 8);
    let a = common::snapshot_tree(&one);
    let b = common::snapshot_tree(&eight);
    let names_a: Vec<_> = a.keys().collect();
    let names_b: Vec<_> = b.keys().collect();
    ensure(names_a == names_b, || format!("file sets differ: {names_a:?} vs {names_b:?}"))?;
    for (name, bytes) in &a {
        ensure(&b[name] == bytes, || format!("{} differs between --threads 1 and 8", name.display()))?;
    }
    Ok(format!("{} output files from all 14 subcommands byte-identical under --threads 1 and 8", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 13] = [
        ("scoring-oracle", scoring_oracle),
        ("binning-totals", binning_totals),
        ("transition-sanity", transition_sanity),
        ("ngram-exactness", ngram_exactness),
        ("boundary-effect", boundary_effect),
        ("entropy", entropy),
        ("pca", pca),
        ("geometry", geometry),
        ("toy-memorization", toy_memorization),
        ("predictor-gradients", predictor_gradients),
        ("predictor-learnability", predictor_learnability),
        ("metric-identities", metric_identities),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let verdict = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(v) => v,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
