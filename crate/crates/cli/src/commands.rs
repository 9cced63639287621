use std::path::{Path, PathBuf};

use memscope::dynamics::{centroid_projection, entropy_profile as entropy_profile_of, group_centroids, pairwise_geometry};
use memscope::dynamics::entropy::ENTROPY_CSV_HEADER;
use memscope::ngram::corpus::load_corpus;
use memscope::ngram::snapshot::encode_snapshot;
use memscope::ngram::stats::{GRAM_STATS_HEADER, PROFILE_CSV_HEADER};
use memscope::ngram::{
    count_ngrams_sharded, index_profile, read_corpus, sequence_gram_stats, ExternalCounter, NgramCounter,
};
use memscope::predictor::synthetic::entropy_threshold_dataset;
use memscope::predictor::{
    evaluate, featurize_set, grad_check_with, split_by_id, train, EvalReport, FeatureSequence, PredictorModel,
    TrainConfig, Trainer,
};
use memscope::report::{write_atomic, write_atomic_bytes};
use memscope::scoring::{
    aggregate_counts, aggregate_csv, corpus_position_histogram, histogram_by_bin, score_map, scores_csv,
    transition_matrix, BinHistogram, Cohort, MemorizationBinning, ScoreFilter, SweepKey,
};
use memscope::toy::{eval_sequences, fit_trie, make_traces, TrieModel};
use memscope::trace::{write_traces, ContinuationSource, TraceSet};

use crate::inputs::{load_counter, load_trace_files, load_traces, require_file};
use crate::{Failure, Outcome};

pub struct Ctx {
    out: PathBuf,
    seed: u64,
}

/// One file to write and its summary.
struct Output {
    name: String,
    bytes: Vec<u8>,
    summary: String,
}

impl Output {
    fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>, summary: impl Into<String>) -> Self {
        Output {
            name: name.into(),
            bytes: bytes.into(),
            summary: summary.into(),
        }
    }
}

impl Ctx {
    pub fn new(out: PathBuf, seed: u64) -> Result<Self, Failure> {
        std::fs::create_dir_all(&out)
            .map_err(|e| Failure::Config(format!("--out: cannot create {}: {e}", out.display())))?;
        Ok(Ctx { out, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn emit(&self, outputs: Vec<Output>) -> Outcome {
        for o in outputs {
            let p = self.path(&o.name);
            write_atomic_bytes(&p, &o.bytes).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            println!("wrote {} ({})", p.display(), o.summary);
        }
        Ok(())
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn model_label(set: &TraceSet) -> String {
    set.traces().first().map(|t| t.model().label.clone()).unwrap_or_default()
}

/// Non-empty cohorts of every set. With several sets, group names carry
/// `model-continuation_len:` so rows stay distinguishable.
fn cohort_groups(sets: &[TraceSet], cohorts: &[Cohort]) -> Vec<(String, TraceSet)> {
    let prefix = sets.len() > 1;
    let mut out = Vec::new();
    for set in sets.iter().filter(|s| !s.is_empty()) {
        for c in cohorts {
            let sub = c.select(set);
            if sub.is_empty() {
                continue;
            }
            let name = if prefix {
                format!("{}-{}:{}", model_label(set), set.continuation_len(), c.label())
            } else {
                c.label().to_string()
            };
            out.push((name, sub));
        }
    }
    out
}

const ALL_COHORTS: [Cohort; 4] = [Cohort::Memorized, Cohort::Half, Cohort::Quarter, Cohort::Unmemorized];

// score

fn score_outputs(sets: &[TraceSet], scheme: MemorizationBinning, filter: ScoreFilter) -> Result<Vec<Output>, Failure> {
    let mut scores = String::new();
    let mut hist = BinHistogram::empty(scheme);
    let mut rows = 0;
    for set in sets.iter().filter(|s| !s.is_empty()) {
        let csv = scores_csv(set, &scheme);
        let body = if scores.is_empty() { &csv[..] } else { &csv[csv.find('\n').unwrap() + 1..] };
        scores.push_str(body);
        hist.merge(&histogram_by_bin(set, scheme).expect("set is non-empty"));
        rows += set.len();
    }
    if rows == 0 {
        return Err(Failure::Data("--traces: the trace files contain no traces".into()));
    }
    let keyed = sets.iter().filter_map(|s| SweepKey::of(s).map(|k| (k, s)));
    let counts = aggregate_counts(keyed, |s| filter.matches(s)).map_err(|e| Failure::Data(e.to_string()))?;
    Ok(vec![
        Output::new("scores.csv", scores, format!("{rows} traces")),
        Output::new("histogram.csv", hist.to_csv(), format!("{} bins", hist.counts.len())),
        Output::new(
            "counts.csv",
            aggregate_csv(&counts),
            format!("{} conditions, filter {}", counts.len(), filter.name()),
        ),
    ])
}

pub fn score(ctx: &Ctx, paths: &[PathBuf], scheme: MemorizationBinning, filter: ScoreFilter) -> Outcome {
    let sets = load_trace_files("--traces", paths)?;
    ctx.emit(score_outputs(&sets, scheme, filter)?)
}

// transition

fn transition_output(
    name: &str,
    small: &TraceSet,
    large: &TraceSet,
    scheme: MemorizationBinning,
) -> Result<Output, String> {
    let m = transition_matrix(&score_map(small), &score_map(large), scheme).map_err(|e| e.to_string())?;
    let empty = m.empty_rows.iter().filter(|&&e| e).count();
    Ok(Output::new(
        name,
        m.to_csv(),
        format!("{} sequences, {empty} empty rows", small.len()),
    ))
}

pub fn transition(ctx: &Ctx, small: &Path, large: &Path, scheme: MemorizationBinning) -> Outcome {
    require_file("--traces", small)?;
    require_file("--traces", large)?;
    let a = load_traces("--traces", small)?;
    let b = load_traces("--traces", large)?;
    let out = transition_output("transition.csv", &a, &b, scheme)
        .map_err(|e| Failure::Data(format!("{} vs {}: {e}", small.display(), large.display())))?;
    ctx.emit(vec![out])
}

// position-hist

fn position_output(sets: &[TraceSet], parts: usize, filter: ScoreFilter, max_index: Option<u64>) -> Result<Output, Failure> {
    let nonempty: Vec<&TraceSet> = sets.iter().filter(|s| !s.is_empty()).collect();
    if nonempty.is_empty() {
        return Err(Failure::Data("--traces: the trace files contain no traces".into()));
    }
    let observed = nonempty
        .iter()
        .flat_map(|s| s.iter().map(|t| t.corpus_index()))
        .max()
        .unwrap_or(0);
    let max = max_index.unwrap_or(observed);
    let mut total: Option<memscope::scoring::PositionHistogram> = None;
    for set in nonempty {
        let h = corpus_position_histogram(set, parts, Some(max), |s| filter.matches(s)).map_err(|e| match e {
            memscope::scoring::ScoringError::IndexOutOfRange { .. } => Failure::Config(format!("--max-index: {e}")),
            e => Failure::Data(e.to_string()),
        })?;
        match &mut total {
            None => total = Some(h),
            Some(t) => {
                for (a, b) in t.counts.iter_mut().zip(&h.counts) {
                    *a += b;
                }
            }
        }
    }
    let h = total.expect("at least one set");
    let selected: u64 = h.counts.iter().sum();
    Ok(Output::new(
        "position_hist.csv",
        h.to_csv(),
        format!("{parts} parts of width {}, {selected} traces match {}", h.part_width, filter.name()),
    ))
}

pub fn position_hist(ctx: &Ctx, paths: &[PathBuf], parts: usize, filter: ScoreFilter, max_index: Option<u64>) -> Outcome {
    let sets = load_trace_files("--traces", paths)?;
    ctx.emit(vec![position_output(&sets, parts, filter, max_index)?])
}

// n-grams

pub fn ngram_count(ctx: &Ctx, corpus: &Path, order: usize, spill_budget: Option<usize>) -> Outcome {
    require_file("--corpus", corpus)?;
    let name = format!("counts_order{order}.ngct");
    let path = ctx.path(&name);
    match spill_budget {
        None => {
            let (header, docs) = load_corpus(corpus).map_err(|e| data_err(corpus, e))?;
            let shards = rayon::current_num_threads();
            let counter =
                count_ngrams_sharded(&docs, order, header.vocab_size, shards).map_err(|e| data_err(corpus, e))?;
            write_atomic(&path, |w| encode_snapshot(w, &counter)).map_err(|e| data_err(&path, e))?;
            println!(
                "wrote {} ({} distinct grams, {} tokens, {} documents)",
                path.display(),
                counter.len(),
                counter.total_tokens_seen(),
                counter.documents()
            );
        }
        Some(budget) => {
            let (header, reader) = read_corpus(corpus).map_err(|e| data_err(corpus, e))?;
            let mut ext = ExternalCounter::new(order, header.vocab_size, budget).map_err(|e| data_err(corpus, e))?;
            for doc in reader {
                let doc = doc.map_err(|e| data_err(corpus, e))?;
                ext.add_document(&doc).map_err(|e| data_err(corpus, e))?;
            }
            let s = ext.finish(&path).map_err(|e| data_err(&path, e))?;
            println!(
                "wrote {} ({} distinct grams, {} tokens, {} documents, {} runs spilled)",
                path.display(),
                s.entries,
                s.total_tokens_seen,
                s.documents,
                s.runs_spilled
            );
        }
    }
    Ok(())
}

fn profile_output(sets: &[TraceSet], counter: &NgramCounter, source: ContinuationSource) -> Result<Output, Failure> {
    let mut csv = String::from(PROFILE_CSV_HEADER);
    let groups = cohort_groups(sets, &Cohort::STANDARD);
    for (name, sub) in &groups {
        index_profile(sub, counter, name, source)
            .map_err(|e| Failure::Data(format!("{name}: {e}")))?
            .append_csv_rows(&mut csv);
    }
    Ok(Output::new(
        "ngram_profile.csv",
        csv,
        format!("{} cohorts, order {}", groups.len(), counter.order()),
    ))
}

pub fn ngram_profile(ctx: &Ctx, paths: &[PathBuf], counter: &Path, source: ContinuationSource) -> Outcome {
    let c = load_counter("--counter", counter)?;
    let sets = load_trace_files("--traces", paths)?;
    ctx.emit(vec![profile_output(&sets, &c, source)?])
}

fn gram_stats_output(sets: &[TraceSet], counter: &NgramCounter) -> Result<Output, Failure> {
    let mut csv = String::from(GRAM_STATS_HEADER);
    let groups = cohort_groups(sets, &ALL_COHORTS);
    for (name, sub) in &groups {
        let row = sequence_gram_stats(sub, counter, name).map_err(|e| Failure::Data(format!("{name}: {e}")))?;
        csv.push_str(&row.csv_row());
    }
    Ok(Output::new(
        "gram_stats.csv",
        csv,
        format!("{} cohorts, order {}", groups.len(), counter.order()),
    ))
}

pub fn gram_stats(ctx: &Ctx, paths: &[PathBuf], counter: &Path) -> Outcome {
    let c = load_counter("--counter", counter)?;
    let sets = load_trace_files("--traces", paths)?;
    ctx.emit(vec![gram_stats_output(&sets, &c)?])
}

// dynamics

fn entropy_output(sets: &[TraceSet], with_context: bool) -> Result<Output, Failure> {
    let mut csv = String::from(ENTROPY_CSV_HEADER);
    let groups = cohort_groups(sets, &Cohort::STANDARD);
    for (name, sub) in &groups {
        entropy_profile_of(sub, name, with_context)
            .map_err(|e| Failure::Data(format!("{name}: {e}")))?
            .append_csv_rows(&mut csv);
    }
    Ok(Output::new("entropy_profile.csv", csv, format!("{} cohorts", groups.len())))
}

pub fn entropy_profile(ctx: &Ctx, paths: &[PathBuf], with_context: bool) -> Outcome {
    let sets = load_trace_files("--traces", paths)?;
    ctx.emit(vec![entropy_output(&sets, with_context)?])
}

fn geometry_outputs(set: &TraceSet, suffix: &str) -> Result<Vec<Output>, String> {
    let centroids = group_centroids(set).map_err(|e| e.to_string())?;
    let geometry = pairwise_geometry(&centroids).map_err(|e| e.to_string())?;
    let projection = centroid_projection(&centroids).map_err(|e| e.to_string())?;
    let ratio = projection.pca.explained_variance_ratio();
    Ok(vec![
        Output::new(
            format!("geometry{suffix}.csv"),
            geometry.to_csv(),
            format!("{} groups over {} steps", geometry.keys.len(), geometry.steps.len()),
        ),
        Output::new(
            format!("centroid_pca{suffix}.csv"),
            projection.to_csv(),
            format!(
                "{} points, explained variance {:.4} + {:.4}",
                projection.points.len(),
                ratio[0],
                ratio[1]
            ),
        ),
    ])
}

pub fn embed_geometry(ctx: &Ctx, path: &Path) -> Outcome {
    let set = load_traces("--traces", path)?;
    ctx.emit(geometry_outputs(&set, "").map_err(|e| data_err(path, e))?)
}

// toy backend

pub fn toy_fit(ctx: &Ctx, corpus: &Path, max_order: usize, embedding_dim: usize) -> Outcome {
    require_file("--corpus", corpus)?;
    if max_order < 2 {
        return Err(Failure::Config(format!("--max-order: must be at least 2, got {max_order}")));
    }
    let (header, docs) = load_corpus(corpus).map_err(|e| data_err(corpus, e))?;
    let model = fit_trie(&docs, max_order, header.vocab_size, embedding_dim).map_err(|e| data_err(corpus, e))?;
    ctx.emit(vec![Output::new(
        "toy_model.json",
        model.to_json(),
        format!("{} contexts from {} tokens", model.node_count(), model.total_tokens()),
    )])
}

pub fn toy_trace(
    ctx: &Ctx,
    model_path: &Path,
    corpus: &Path,
    context_len: usize,
    continuation_len: usize,
    label: &str,
) -> Outcome {
    require_file("--model", model_path)?;
    require_file("--corpus", corpus)?;
    let text = std::fs::read_to_string(model_path).map_err(|e| data_err(model_path, e))?;
    let model = TrieModel::from_json(&text).map_err(|e| data_err(model_path, e))?;
    let (header, docs) = load_corpus(corpus).map_err(|e| data_err(corpus, e))?;
    if header.vocab_size > model.vocab_size() {
        return Err(data_err(
            corpus,
            format!("vocab_size {} exceeds the model's {}", header.vocab_size, model.vocab_size()),
        ));
    }
    let needed = context_len + continuation_len;
    let eval: Vec<_> = eval_sequences(&docs)
        .into_iter()
        .filter(|s| s.tokens.len() >= needed)
        .collect();
    let skipped = docs.len() - eval.len();
    let set = make_traces(&model, &eval, context_len, continuation_len, label).map_err(|e| data_err(corpus, e))?;
    let mut bytes = Vec::new();
    write_traces(&mut bytes, set.iter()).map_err(|e| data_err(corpus, e))?;
    ctx.emit(vec![Output::new(
        "traces.jsonl",
        bytes,
        format!("{} traces, {skipped} documents shorter than {needed} tokens skipped", set.len()),
    )])
}

// predictor

fn featurize_all(sets: &[TraceSet], counter: &NgramCounter, paths: &[PathBuf]) -> Result<Vec<FeatureSequence>, Failure> {
    if counter.order() != 1 {
        return Err(Failure::Config(format!(
            "--counter: the predictor needs an order-1 counter, got order {}",
            counter.order()
        )));
    }
    let mut all = Vec::new();
    for (set, path) in sets.iter().zip(paths) {
        all.extend(featurize_set(set, counter).map_err(|e| data_err(path, e))?);
    }
    if all.is_empty() {
        return Err(Failure::Data("--traces: the trace files contain no traces".into()));
    }
    Ok(all)
}

fn eval_outputs(reports: &[EvalReport], scheme: MemorizationBinning, prefix: &str) -> Vec<Output> {
    let mut table = String::from(EvalReport::TABLE_HEADER);
    let mut bins = BinHistogram::empty(scheme);
    for r in reports {
        table.push_str(&r.table_row());
        bins.merge(&r.full_correct_by_bin);
    }
    let summary = reports
        .iter()
        .map(|r| format!("token {:.4} full {:.4}", r.token_accuracy, r.full_accuracy))
        .collect::<Vec<_>>()
        .join("; ");
    vec![
        Output::new(format!("{prefix}_eval.csv"), table, summary),
        Output::new(
            format!("{prefix}_by_bin.csv"),
            bins.to_csv(),
            format!("{} fully correct sequences", bins.total()),
        ),
    ]
}

pub fn predict_train(ctx: &Ctx, paths: &[PathBuf], counter: &Path, epochs: usize, scheme: MemorizationBinning) -> Outcome {
    let c = load_counter("--counter", counter)?;
    let sets = load_trace_files("--traces", paths)?;
    let data = featurize_all(&sets, &c, paths)?;
    let (train_set, held_out) = split_by_id(data, ctx.seed);
    if train_set.is_empty() {
        return Err(Failure::Data("--traces: every sequence fell in the held-out split".into()));
    }
    let config = TrainConfig {
        epochs,
        seed: ctx.seed,
        ..TrainConfig::default()
    };
    // Training stays on this thread whatever --threads says.
    let out = train(&train_set, &config).map_err(|e| Failure::Data(e.to_string()))?;
    let mut log = String::from("epoch,mean_loss\n");
    log.push_str(&format!("0,{:.12e}\n", out.initial_loss));
    for (e, l) in out.epoch_losses.iter().enumerate() {
        log.push_str(&format!("{},{l:.12e}\n", e + 1));
    }
    let mut outputs = vec![
        Output::new(
            "predictor.mprd",
            out.model.to_bytes(),
            format!(
                "{} parameters, {} train sequences, loss {:.6} -> {:.6}",
                out.model.params().len(),
                train_set.len(),
                out.initial_loss,
                out.final_loss
            ),
        ),
        Output::new("train_log.csv", log, format!("{} epochs, {} steps", epochs, out.steps)),
    ];
    if !held_out.is_empty() {
        let r = evaluate(&out.model, &held_out, scheme).map_err(|e| Failure::Data(e.to_string()))?;
        outputs.extend(eval_outputs(&[r], scheme, "heldout"));
    }
    ctx.emit(outputs)
}

fn load_predictor(path: &Path) -> Result<PredictorModel, Failure> {
    require_file("--model", path)?;
    PredictorModel::load(path).map_err(|e| data_err(path, e))
}

fn predictor_outputs(
    sets: &[TraceSet],
    counter: &NgramCounter,
    model: &PredictorModel,
    paths: &[PathBuf],
    scheme: MemorizationBinning,
) -> Result<Vec<Output>, Failure> {
    if counter.order() != 1 {
        return Err(Failure::Config(format!(
            "--counter: the predictor needs an order-1 counter, got order {}",
            counter.order()
        )));
    }
    let mut reports = Vec::new();
    for (set, path) in sets.iter().zip(paths) {
        if set.is_empty() {
            continue;
        }
        let data = featurize_set(set, counter).map_err(|e| data_err(path, e))?;
        reports.push(evaluate(model, &data, scheme).map_err(|e| data_err(path, e))?);
    }
    if reports.is_empty() {
        return Err(Failure::Data("--traces: the trace files contain no traces".into()));
    }
    Ok(eval_outputs(&reports, scheme, "predictor"))
}

pub fn predict_eval(ctx: &Ctx, paths: &[PathBuf], counter: &Path, model: &Path, scheme: MemorizationBinning) -> Outcome {
    let c = load_counter("--counter", counter)?;
    let m = load_predictor(model)?;
    let sets = load_trace_files("--traces", paths)?;
    ctx.emit(predictor_outputs(&sets, &c, &m, paths, scheme)?)
}

pub fn grad_check(ctx: &Ctx, steps: usize, samples: usize) -> Outcome {
    let data = entropy_threshold_dataset(4, 8, 16, ctx.seed);
    let batch: Vec<&FeatureSequence> = data.iter().collect();
    let config = TrainConfig {
        seed: ctx.seed,
        ..TrainConfig::default()
    };
    let model = PredictorModel::init(data[0].dim(), config.architecture, ctx.seed)
        .map_err(|e| Failure::Data(e.to_string()))?;
    let mut trainer = Trainer::new(model, config);
    let fail = |e: memscope::predictor::PredictorError| Failure::Data(e.to_string());
    let first = grad_check_with(&trainer.model, &batch, 1e-5, samples, ctx.seed).map_err(fail)?;
    for _ in 0..steps {
        trainer.step(&batch).map_err(fail)?;
    }
    let second = grad_check_with(&trainer.model, &batch, 1e-5, samples, ctx.seed).map_err(fail)?;
    let mut csv = String::from("adam_steps,checked,max_relative_error\n");
    csv.push_str(&format!("0,{},{:.6e}\n", first.checked, first.max_relative_error));
    csv.push_str(&format!("{steps},{},{:.6e}\n", second.checked, second.max_relative_error));
    ctx.emit(vec![Output::new(
        "grad_check.csv",
        csv,
        format!(
            "max relative error {:.3e} at init, {:.3e} after {steps} steps",
            first.max_relative_error, second.max_relative_error
        ),
    )])
}

// report

pub fn report(
    ctx: &Ctx,
    paths: &[PathBuf],
    counter: Option<&Path>,
    model: Option<&Path>,
    scheme: MemorizationBinning,
    parts: usize,
) -> Outcome {
    let c = counter.map(|p| load_counter("--counter", p)).transpose()?;
    let m = model.map(load_predictor).transpose()?;
    if m.is_some() && c.is_none() {
        return Err(Failure::Config("--model: needs an order-1 --counter".into()));
    }
    let sets = load_trace_files("--traces", paths)?;
    let mut outputs = score_outputs(&sets, scheme, ScoreFilter::Full)?;
    let skip = |what: &str, why: &str| println!("skipped {what}: {why}");

    for i in 1..sets.len() {
        let name = format!("transition_{}_{i}.csv", i - 1);
        match transition_output(&name, &sets[i - 1], &sets[i], scheme) {
            Ok(o) => outputs.push(o),
            Err(e) => skip(&name, &e),
        }
    }
    outputs.push(position_output(&sets, parts, ScoreFilter::Full, None)?);
    outputs.push(entropy_output(&sets, false)?);
    for (i, set) in sets.iter().enumerate() {
        let suffix = format!("_{i}");
        if set.iter().any(|t| t.step_embedding().is_none()) || set.is_empty() {
            skip(&format!("geometry{suffix}.csv"), "traces lack step embeddings");
            continue;
        }
        match geometry_outputs(set, &suffix) {
            Ok(o) => outputs.extend(o),
            Err(e) => skip(&format!("geometry{suffix}.csv"), &e),
        }
    }
    match &c {
        Some(counter) => {
            outputs.push(profile_output(&sets, counter, ContinuationSource::True)?);
            outputs.push(gram_stats_output(&sets, counter)?);
        }
        None => skip("ngram_profile.csv, gram_stats.csv", "no --counter"),
    }
    match (&m, &c) {
        (Some(model), Some(counter)) => outputs.extend(predictor_outputs(&sets, counter, model, paths, scheme)?),
        _ => skip("predictor_eval.csv", "no --model"),
    }
    ctx.emit(outputs)
}
