//! Memorization scores, bin schemes, histograms and transition matrices.
//!
//! A score is the fraction of continuation positions where greedy decoding
//! reproduced the true token. Scores are kept as exact `matches / length`
//! rationals so bin assignment at edges such as 0.5 or 0.2 never depends on
//! float rounding.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::report::fmt_real;
use crate::trace::{GenerationTrace, TraceSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("length mismatch: generated has {generated} tokens, truth has {truth}")]
    LengthMismatch { generated: usize, truth: usize },
    #[error("empty trace set")]
    EmptyTraceSet,
    #[error("empty input")]
    EmptyInput,
    #[error("key sets differ: {only_small} ids only in the first map (e.g. {example:?}), {only_large} only in the second")]
    KeySetMismatch {
        only_small: usize,
        only_large: usize,
        example: String,
    },
    #[error("parts must be at least 1")]
    InvalidParts,
    #[error("corpus_index {index} of {sequence_id} exceeds max index {max}")]
    IndexOutOfRange {
        sequence_id: String,
        index: u64,
        max: u64,
    },
    #[error("invalid bin width {0}; expected 0.1 or 0.2")]
    InvalidWidth(String),
    #[error("invalid score filter {0:?}")]
    InvalidFilter(String),
}

/// Exact memorization score: `matches` of `length` positions agreed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemorizationScore {
    matches: u32,
    length: u32,
}

impl MemorizationScore {
    /// Panics if `matches > length` or `length == 0`.
    pub fn new(matches: u32, length: u32) -> Self {
        assert!(length > 0, "score length must be positive");
        assert!(matches <= length, "matches exceed length");
        MemorizationScore { matches, length }
    }

    pub fn matches(self) -> u32 {
        self.matches
    }

    pub fn length(self) -> u32 {
        self.length
    }

    pub fn value(self) -> f64 {
        f64::from(self.matches) / f64::from(self.length)
    }

    /// K-extractable: every position reproduced.
    pub fn is_full(self) -> bool {
        self.matches == self.length
    }

    pub fn is_zero(self) -> bool {
        self.matches == 0
    }

    /// True when the score equals `num / den` exactly.
    pub fn equals_fraction(self, num: u32, den: u32) -> bool {
        u64::from(self.matches) * u64::from(den) == u64::from(num) * u64::from(self.length)
    }
}

impl PartialOrd for MemorizationScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MemorizationScore {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u64::from(self.matches) * u64::from(other.length);
        let rhs = u64::from(other.matches) * u64::from(self.length);
        lhs.cmp(&rhs)
            .then(self.length.cmp(&other.length))
    }
}

impl fmt::Display for MemorizationScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.matches, self.length)
    }
}

/// Fraction of positions where `generated[i] == truth[i]`.
pub fn memorization_score<T: PartialEq>(
    generated: &[T],
    truth: &[T],
) -> Result<MemorizationScore, ScoringError> {
    if generated.len() != truth.len() || truth.is_empty() {
        return Err(ScoringError::LengthMismatch {
            generated: generated.len(),
            truth: truth.len(),
        });
    }
    let matches = generated.iter().zip(truth).filter(|(g, t)| g == t).count();
    Ok(MemorizationScore::new(matches as u32, truth.len() as u32))
}

/// Score of a validated trace. Lengths are equal by construction.
pub fn trace_score(trace: &GenerationTrace) -> MemorizationScore {
    MemorizationScore::new(
        trace.matched_tokens() as u32,
        trace.continuation_len() as u32,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinWidth {
    Tenth,
    Fifth,
}

/// Equal-width bins over [0, 1]: half-open `[i·w, (i+1)·w)` with the top
/// bin closed at 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemorizationBinning {
    width: BinWidth,
}

const FIFTH_LABELS: [&str; 5] = ["very_low", "low", "medium", "high", "very_high"];
const TENTH_LABELS: [&str; 10] = [
    "0.0-0.1", "0.1-0.2", "0.2-0.3", "0.3-0.4", "0.4-0.5", "0.5-0.6", "0.6-0.7", "0.7-0.8",
    "0.8-0.9", "0.9-1.0",
];

impl MemorizationBinning {
    pub fn new(width: BinWidth) -> Self {
        MemorizationBinning { width }
    }

    pub fn tenths() -> Self {
        Self::new(BinWidth::Tenth)
    }

    pub fn fifths() -> Self {
        Self::new(BinWidth::Fifth)
    }

    pub fn width(&self) -> BinWidth {
        self.width
    }

    pub fn width_value(&self) -> f64 {
        match self.width {
            BinWidth::Tenth => 0.1,
            BinWidth::Fifth => 0.2,
        }
    }

    pub fn num_bins(&self) -> usize {
        match self.width {
            BinWidth::Tenth => 10,
            BinWidth::Fifth => 5,
        }
    }

    pub fn labels(&self) -> &'static [&'static str] {
        match self.width {
            BinWidth::Tenth => &TENTH_LABELS,
            BinWidth::Fifth => &FIFTH_LABELS,
        }
    }

    pub fn label(&self, bin: usize) -> &'static str {
        self.labels()[bin]
    }

    /// Bin index of `score`. Exact: `floor(matches · bins / length)`,
    /// clamped so 1.0 lands in the top bin.
    pub fn bin_index(&self, score: MemorizationScore) -> usize {
        let bins = self.num_bins() as u64;
        let idx = u64::from(score.matches) * bins / u64::from(score.length);
        idx.min(bins - 1) as usize
    }
}

impl FromStr for MemorizationBinning {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0.1" | ".1" => Ok(Self::tenths()),
            "0.2" | ".2" => Ok(Self::fifths()),
            other => Err(ScoringError::InvalidWidth(other.to_string())),
        }
    }
}

/// Label of the bin containing `score`.
pub fn bin_score(score: MemorizationScore, scheme: &MemorizationBinning) -> &'static str {
    scheme.label(scheme.bin_index(score))
}

/// Named score filters used for cohort selection and aggregate counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreFilter {
    Any,
    /// Score exactly 1.
    Full,
    /// Score exactly 0.
    Zero,
    /// Score exactly 1/2.
    Half,
    /// Score exactly 1/4.
    Quarter,
    AtLeast(f64),
}

impl ScoreFilter {
    pub fn matches(&self, score: MemorizationScore) -> bool {
        match *self {
            ScoreFilter::Any => true,
            ScoreFilter::Full => score.is_full(),
            ScoreFilter::Zero => score.is_zero(),
            ScoreFilter::Half => score.equals_fraction(1, 2),
            ScoreFilter::Quarter => score.equals_fraction(1, 4),
            ScoreFilter::AtLeast(t) => score.value() >= t,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ScoreFilter::Any => "any".into(),
            ScoreFilter::Full => "full".into(),
            ScoreFilter::Zero => "zero".into(),
            ScoreFilter::Half => "half".into(),
            ScoreFilter::Quarter => "quarter".into(),
            ScoreFilter::AtLeast(t) => format!("ge:{t}"),
        }
    }
}

impl FromStr for ScoreFilter {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "any" => Ok(ScoreFilter::Any),
            "full" | "memorized" => Ok(ScoreFilter::Full),
            "zero" | "unmemorized" => Ok(ScoreFilter::Zero),
            "half" => Ok(ScoreFilter::Half),
            "quarter" => Ok(ScoreFilter::Quarter),
            _ => s
                .strip_prefix("ge:")
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|t| t.is_finite())
                .map(ScoreFilter::AtLeast)
                .ok_or_else(|| ScoringError::InvalidFilter(s.to_string())),
        }
    }
}

/// The cohorts the per-index analyses compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cohort {
    Memorized,
    Half,
    Quarter,
    Unmemorized,
}

impl Cohort {
    pub const STANDARD: [Cohort; 3] = [Cohort::Memorized, Cohort::Half, Cohort::Unmemorized];

    pub fn filter(self) -> ScoreFilter {
        match self {
            Cohort::Memorized => ScoreFilter::Full,
            Cohort::Half => ScoreFilter::Half,
            Cohort::Quarter => ScoreFilter::Quarter,
            Cohort::Unmemorized => ScoreFilter::Zero,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Cohort::Memorized => "memorized",
            Cohort::Half => "half",
            Cohort::Quarter => "quarter",
            Cohort::Unmemorized => "unmemorized",
        }
    }

    pub fn select(self, traces: &TraceSet) -> TraceSet {
        let f = self.filter();
        traces.filter(|t| f.matches(trace_score(t)))
    }
}

/// Counts per bin of a [`MemorizationBinning`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinHistogram {
    pub scheme: MemorizationBinning,
    pub counts: Vec<u64>,
}

impl BinHistogram {
    pub fn empty(scheme: MemorizationBinning) -> Self {
        BinHistogram {
            scheme,
            counts: vec![0; scheme.num_bins()],
        }
    }

    pub fn from_scores<I>(scores: I, scheme: MemorizationBinning) -> Self
    where
        I: IntoIterator<Item = MemorizationScore>,
    {
        let mut h = Self::empty(scheme);
        for s in scores {
            h.counts[scheme.bin_index(s)] += 1;
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &BinHistogram) {
        assert_eq!(self.scheme, other.scheme, "merging histograms of different schemes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `bin,label,count,normalized`.
    pub fn to_csv(&self) -> String {
        let total = self.total();
        let mut out = String::from("bin,label,count,normalized\n");
        for (i, &c) in self.counts.iter().enumerate() {
            let norm = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            out.push_str(&format!(
                "{i},{},{c},{}\n",
                self.scheme.label(i),
                fmt_real(norm)
            ));
        }
        out
    }
}

pub fn histogram_by_bin(
    traces: &TraceSet,
    scheme: MemorizationBinning,
) -> Result<BinHistogram, ScoringError> {
    if traces.is_empty() {
        return Err(ScoringError::EmptyTraceSet);
    }
    Ok(BinHistogram::from_scores(traces.iter().map(trace_score), scheme))
}

/// Key of one experimental condition in a sweep.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SweepKey {
    pub model: String,
    pub context_len: usize,
    pub continuation_len: usize,
}

impl SweepKey {
    pub fn of(traces: &TraceSet) -> Option<SweepKey> {
        traces.traces().first().map(|t| SweepKey {
            model: t.model().label.clone(),
            context_len: traces.context_len(),
            continuation_len: traces.continuation_len(),
        })
    }
}

/// Counts traces satisfying `predicate` per sweep key. Rows come out sorted
/// by key; sets sharing a key are summed.
pub fn aggregate_counts<'a, I, F>(sets: I, predicate: F) -> Result<Vec<(SweepKey, u64)>, ScoringError>
where
    I: IntoIterator<Item = (SweepKey, &'a TraceSet)>,
    F: Fn(MemorizationScore) -> bool,
{
    let mut rows: BTreeMap<SweepKey, u64> = BTreeMap::new();
    for (key, set) in sets {
        if set.is_empty() {
            return Err(ScoringError::EmptyTraceSet);
        }
        let n = set.iter().filter(|t| predicate(trace_score(t))).count() as u64;
        *rows.entry(key).or_default() += n;
    }
    Ok(rows.into_iter().collect())
}

pub fn aggregate_csv(rows: &[(SweepKey, u64)]) -> String {
    let mut out = String::from("model,context_len,continuation_len,count\n");
    for (k, n) in rows {
        out.push_str(&format!(
            "{},{},{},{n}\n",
            k.model, k.context_len, k.continuation_len
        ));
    }
    out
}

/// Sequence-level movement between bins under two models.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub scheme: MemorizationBinning,
    /// `counts[a][b]`: sequences in bin `a` under the first model and `b`
    /// under the second.
    pub counts: Vec<Vec<u64>>,
    pub row_normalized: Vec<Vec<f64>>,
    pub empty_rows: Vec<bool>,
}

impl TransitionMatrix {
    pub fn from_counts(scheme: MemorizationBinning, counts: Vec<Vec<u64>>) -> Self {
        let mut row_normalized = Vec::with_capacity(counts.len());
        let mut empty_rows = Vec::with_capacity(counts.len());
        for row in &counts {
            let total: u64 = row.iter().sum();
            empty_rows.push(total == 0);
            row_normalized.push(
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect(),
            );
        }
        TransitionMatrix {
            scheme,
            counts,
            row_normalized,
            empty_rows,
        }
    }

    /// `row_bin,row_label,col_bin,col_label,count,normalized`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_bin,row_label,col_bin,col_label,count,normalized\n");
        for (a, row) in self.counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                out.push_str(&format!(
                    "{a},{},{b},{},{c},{}\n",
                    self.scheme.label(a),
                    self.scheme.label(b),
                    fmt_real(self.row_normalized[a][b])
                ));
            }
        }
        out
    }
}

pub fn transition_matrix(
    scores_small: &BTreeMap<String, MemorizationScore>,
    scores_large: &BTreeMap<String, MemorizationScore>,
    scheme: MemorizationBinning,
) -> Result<TransitionMatrix, ScoringError> {
    if scores_small.is_empty() && scores_large.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    let only_small: Vec<&String> = scores_small
        .keys()
        .filter(|k| !scores_large.contains_key(*k))
        .collect();
    let only_large: Vec<&String> = scores_large
        .keys()
        .filter(|k| !scores_small.contains_key(*k))
        .collect();
    if !only_small.is_empty() || !only_large.is_empty() {
        let example = only_small
            .first()
            .or(only_large.first())
            .map(|s| s.to_string())
            .unwrap_or_default();
        return Err(ScoringError::KeySetMismatch {
            only_small: only_small.len(),
            only_large: only_large.len(),
            example,
        });
    }
    let n = scheme.num_bins();
    let mut counts = vec![vec![0u64; n]; n];
    for (id, &small) in scores_small {
        let large = scores_large[id];
        counts[scheme.bin_index(small)][scheme.bin_index(large)] += 1;
    }
    Ok(TransitionMatrix::from_counts(scheme, counts))
}

/// `sequence_id → score` for every trace in the set.
pub fn score_map(traces: &TraceSet) -> BTreeMap<String, MemorizationScore> {
    traces
        .iter()
        .map(|t| (t.sequence_id().to_string(), trace_score(t)))
        .collect()
}

/// Counts of predicate-satisfying traces over equal-width corpus-index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionHistogram {
    pub max_index: u64,
    pub part_width: u64,
    pub counts: Vec<u64>,
}

impl PositionHistogram {
    /// Inclusive index range covered by `part`.
    pub fn range(&self, part: usize) -> (u64, u64) {
        let start = part as u64 * self.part_width;
        let end = if part + 1 == self.counts.len() {
            self.max_index
        } else {
            (start + self.part_width - 1).min(self.max_index)
        };
        (start, end)
    }

    /// `part,start_index,end_index,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("part,start_index,end_index,count\n");
        for (p, c) in self.counts.iter().enumerate() {
            let (s, e) = self.range(p);
            out.push_str(&format!("{p},{s},{e},{c}\n"));
        }
        out
    }
}

/// Splits `[0, max_index]` into `parts` ranges of `floor((max+1)/parts)`
/// indices each (at least one); the last range absorbs the remainder.
/// `max_index` defaults to the largest observed corpus index.
pub fn corpus_position_histogram<F>(
    traces: &TraceSet,
    parts: usize,
    max_index: Option<u64>,
    predicate: F,
) -> Result<PositionHistogram, ScoringError>
where
    F: Fn(MemorizationScore) -> bool,
{
    if parts < 1 {
        return Err(ScoringError::InvalidParts);
    }
    if traces.is_empty() {
        return Err(ScoringError::EmptyTraceSet);
    }
    let observed = traces.iter().map(|t| t.corpus_index()).max().unwrap_or(0);
    let max = max_index.unwrap_or(observed);
    if let Some(t) = traces.iter().find(|t| t.corpus_index() > max) {
        return Err(ScoringError::IndexOutOfRange {
            sequence_id: t.sequence_id().to_string(),
            index: t.corpus_index(),
            max,
        });
    }
    let span = max.saturating_add(1);
    let part_width = (span / parts as u64).max(1);
    let mut counts = vec![0u64; parts];
    for t in traces {
        if predicate(trace_score(t)) {
            let p = (t.corpus_index() / part_width).min(parts as u64 - 1) as usize;
            counts[p] += 1;
        }
    }
    Ok(PositionHistogram {
        max_index: max,
        part_width,
        counts,
    })
}

/// `sequence_id,model,corpus_index,matches,length,score,bin`.
pub fn scores_csv(traces: &TraceSet, scheme: &MemorizationBinning) -> String {
    let mut out = String::from("sequence_id,model,corpus_index,matches,length,score,bin\n");
    for t in traces {
        let s = trace_score(t);
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t.sequence_id(),
            t.model().label,
            t.corpus_index(),
            s.matches(),
            s.length(),
            fmt_real(s.value()),
            bin_score(s, scheme)
        ));
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::trace::{validate_trace, ModelMeta, TraceRecord};
    use proptest::prelude::*;

    pub(crate) fn trace_with(id: &str, matches: usize, len: usize, corpus_index: u64) -> GenerationTrace {
        let truth: Vec<u32> = (0..len as u32).collect();
        let generated: Vec<u32> = (0..len as u32)
            .map(|i| if (i as usize) < matches { i } else { i + 100 })
            .collect();
        validate_trace(TraceRecord {
            schema_version: 1,
            sequence_id: id.into(),
            corpus_index,
            model: ModelMeta::new("m", 1000, 2),
            context: vec![1, 2],
            true_continuation: truth,
            generated_continuation: generated,
            step_entropy: vec![0.0; len],
            step_embedding: None,
            context_entropy: None,
            decode_mode: "greedy".into(),
        })
        .unwrap()
    }

    fn set_of(scores: &[(usize, usize)]) -> TraceSet {
        TraceSet::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &(m, l))| trace_with(&format!("s{i}"), m, l, i as u64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn score_examples() {
        let t: Vec<u32> = (0..16).collect();
        assert_eq!(memorization_score(&t, &t).unwrap().value(), 1.0);
        let g: Vec<u32> = (100..116).collect();
        assert_eq!(memorization_score(&g, &t).unwrap().value(), 0.0);
        let s = memorization_score(&[5, 7, 9, 2], &[5, 7, 1, 2]).unwrap();
        assert_eq!(s, MemorizationScore::new(3, 4));
        assert_eq!(s.value(), 0.75);
        assert_eq!(
            memorization_score(&[1, 2], &[1]),
            Err(ScoringError::LengthMismatch { generated: 2, truth: 1 })
        );
        assert!(memorization_score::<u32>(&[], &[]).is_err());
    }

    #[test]
    fn bin_examples() {
        let fifths = MemorizationBinning::fifths();
        let tenths = MemorizationBinning::tenths();
        assert_eq!(bin_score(MemorizationScore::new(19, 20), &fifths), "very_high");
        assert_eq!(tenths.bin_index(MemorizationScore::new(0, 16)), 0);
        assert_eq!(bin_score(MemorizationScore::new(16, 16), &fifths), "very_high");
        assert_eq!(tenths.bin_index(MemorizationScore::new(16, 16)), 9);
        // Edges are exact: 0.5 opens bin 5, 0.2 opens "low".
        assert_eq!(tenths.bin_index(MemorizationScore::new(8, 16)), 5);
        assert_eq!(fifths.bin_index(MemorizationScore::new(1, 5)), 1);
        assert_eq!(fifths.bin_index(MemorizationScore::new(3, 16)), 0);
        assert_eq!(fifths.labels().len(), 5);
        assert_eq!(tenths.labels().len(), 10);
        assert_eq!("0.2".parse::<MemorizationBinning>().unwrap(), fifths);
        assert!("0.3".parse::<MemorizationBinning>().is_err());
    }

    #[test]
    fn histogram_examples() {
        let set = set_of(&[(0, 4), (0, 4), (2, 4), (4, 4)]);
        let h = histogram_by_bin(&set, MemorizationBinning::tenths()).unwrap();
        assert_eq!(h.counts, vec![2, 0, 0, 0, 0, 1, 0, 0, 0, 1]);

        let all_full = set_of(&[(4, 4), (4, 4), (4, 4)]);
        let h = histogram_by_bin(&all_full, MemorizationBinning::fifths()).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0, 0, 3]);

        assert_eq!(
            histogram_by_bin(&TraceSet::default(), MemorizationBinning::fifths()),
            Err(ScoringError::EmptyTraceSet)
        );
    }

    #[test]
    fn aggregate_examples() {
        let a = set_of(&[(4, 4), (4, 4), (4, 4), (1, 4)]);
        let b = set_of(&[(0, 4), (3, 4)]);
        let k1 = SweepKey { model: "160m".into(), context_len: 32, continuation_len: 16 };
        let k2 = SweepKey { model: "1b".into(), context_len: 32, continuation_len: 16 };
        let rows = aggregate_counts(
            [(k1.clone(), &a), (k2.clone(), &b)],
            |s| s.is_full(),
        )
        .unwrap();
        assert_eq!(rows, vec![(k1.clone(), 3), (k2.clone(), 0)]);
        let again = aggregate_counts([(k1.clone(), &a), (k2.clone(), &b)], |s| s.is_full()).unwrap();
        assert_eq!(rows, again);

        let rows = aggregate_counts([(k1.clone(), &a)], |s| s.value() >= 0.0).unwrap();
        assert_eq!(rows[0].1, 4);
        assert_eq!(
            aggregate_counts([(k1, &TraceSet::default())], |_| true),
            Err(ScoringError::EmptyTraceSet)
        );
    }

    fn map(pairs: &[(&str, u32, u32)]) -> BTreeMap<String, MemorizationScore> {
        pairs
            .iter()
            .map(|&(k, m, l)| (k.to_string(), MemorizationScore::new(m, l)))
            .collect()
    }

    #[test]
    fn transition_examples() {
        let small = map(&[("a", 1, 10), ("b", 1, 10)]);
        let large = map(&[("a", 9, 10), ("b", 1, 10)]);
        let tm = transition_matrix(&small, &large, MemorizationBinning::fifths()).unwrap();
        assert_eq!(tm.counts[0][4], 1);
        assert_eq!(tm.counts[0][0], 1);
        assert_eq!(tm.row_normalized[0][4], 0.5);
        assert_eq!(tm.row_normalized[0][0], 0.5);
        assert!(tm.empty_rows[1] && !tm.empty_rows[0]);

        let x = map(&[("a", 3, 10), ("b", 10, 10), ("c", 0, 10)]);
        let tm = transition_matrix(&x, &x, MemorizationBinning::fifths()).unwrap();
        for (a, row) in tm.row_normalized.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if a != b {
                    assert_eq!(tm.counts[a][b], 0);
                    assert_eq!(v, 0.0);
                } else if !tm.empty_rows[a] {
                    assert_eq!(v, 1.0);
                }
            }
        }

        let missing = map(&[("a", 3, 10)]);
        assert!(matches!(
            transition_matrix(&x, &missing, MemorizationBinning::fifths()),
            Err(ScoringError::KeySetMismatch { only_small: 2, only_large: 0, .. })
        ));
        assert_eq!(
            transition_matrix(&BTreeMap::new(), &BTreeMap::new(), MemorizationBinning::fifths()),
            Err(ScoringError::EmptyInput)
        );
    }

    #[test]
    fn position_histogram_examples() {
        let traces: Vec<_> = (0..100).map(|i| trace_with(&format!("s{i}"), 1, 2, i)).collect();
        let set = TraceSet::new(traces).unwrap();
        let h = corpus_position_histogram(&set, 50, None, |_| true).unwrap();
        assert_eq!(h.counts, vec![2; 50]);
        assert_eq!(h.range(0), (0, 1));
        assert_eq!(h.range(49), (98, 99));

        let h = corpus_position_histogram(&set, 50, None, |_| false).unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));

        // Remainder goes to the last part.
        let h = corpus_position_histogram(&set, 3, None, |_| true).unwrap();
        assert_eq!(h.counts, vec![33, 33, 34]);

        assert_eq!(
            corpus_position_histogram(&set, 0, None, |_| true),
            Err(ScoringError::InvalidParts)
        );
        assert!(matches!(
            corpus_position_histogram(&set, 5, Some(50), |_| true),
            Err(ScoringError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn filters_parse_and_match() {
        let half = MemorizationScore::new(8, 16);
        assert!("half".parse::<ScoreFilter>().unwrap().matches(half));
        assert!(!ScoreFilter::Quarter.matches(half));
        assert!(ScoreFilter::Quarter.matches(MemorizationScore::new(4, 16)));
        assert!("ge:0.5".parse::<ScoreFilter>().unwrap().matches(half));
        assert!("ge:x".parse::<ScoreFilter>().is_err());
    }

    proptest! {
        #[test]
        fn score_matches_position_oracle(pairs in prop::collection::vec((0u32..4, 0u32..4), 1..64)) {
            let (g, t): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let mut hits = 0;
            for i in 0..t.len() {
                if g[i] == t[i] { hits += 1; }
            }
            let s = memorization_score(&g, &t).unwrap();
            prop_assert_eq!(s.matches() as usize, hits);
            prop_assert_eq!(s.length() as usize, t.len());
        }

        #[test]
        fn binning_is_monotone(a in 0u32..=64, b in 0u32..=64, len in 64u32..=64, tenth in any::<bool>()) {
            let scheme = if tenth { MemorizationBinning::tenths() } else { MemorizationBinning::fifths() };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(scheme.bin_index(MemorizationScore::new(lo, len)) <= scheme.bin_index(MemorizationScore::new(hi, len)));
        }

        #[test]
        fn bin_matches_half_open_float_definition(m in 0u32..=48, len in 1u32..=48) {
            prop_assume!(m <= len);
            let s = MemorizationScore::new(m, len);
            for scheme in [MemorizationBinning::tenths(), MemorizationBinning::fifths()] {
                let n = scheme.num_bins() as u32;
                let b = scheme.bin_index(s) as u32;
                // b/n <= m/len < (b+1)/n, or the top bin for 1.0.
                prop_assert!(b * len <= m * n);
                prop_assert!(m * n < (b + 1) * len || (b == n - 1 && m == len));
            }
        }

        #[test]
        fn histogram_permutation_invariant(scores in prop::collection::vec(0usize..=8, 1..40), seed in any::<u64>()) {
            let pairs: Vec<_> = scores.iter().map(|&m| (m, 8)).collect();
            let set = set_of(&pairs);
            let mut shuffled = set.traces().to_vec();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let perm = TraceSet::new(shuffled).unwrap();
            for scheme in [MemorizationBinning::tenths(), MemorizationBinning::fifths()] {
                let h1 = histogram_by_bin(&set, scheme).unwrap();
                prop_assert_eq!(h1.total(), set.len() as u64);
                prop_assert_eq!(h1, histogram_by_bin(&perm, scheme).unwrap());
            }
        }
    }
}
