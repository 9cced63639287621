//! Frequency profiles of trace cohorts against corpus n-gram counts.
//!
//! Positions are absolute over `context ‖ continuation`; the gram at
//! position `i` is the window ending at `i`. For order `n`, positions below
//! `n − 1` have no full window and are reported as absent.

use rayon::prelude::*;

use super::{NgramCounter, NgramError};
use crate::report::{fmt_opt_real, fmt_real};
use crate::trace::{ContinuationSource, GenerationTrace, TraceSet};

/// Mean gram frequency at each absolute index for one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexProfile {
    pub group: String,
    pub order: usize,
    pub source: ContinuationSource,
    pub traces: usize,
    /// `None` where no full window ends at the index.
    pub per_index_mean: Vec<Option<f64>>,
}

pub const PROFILE_CSV_HEADER: &str = "group,order,index,mean\n";

impl IndexProfile {
    /// `group,order,index,mean`; absent means are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(PROFILE_CSV_HEADER);
        self.append_csv_rows(&mut out);
        out
    }

    pub fn append_csv_rows(&self, out: &mut String) {
        for (i, m) in self.per_index_mean.iter().enumerate() {
            out.push_str(&format!("{},{},{i},{}\n", self.group, self.order, fmt_opt_real(*m)));
        }
    }
}

/// Average context/continuation frequencies and the boundary difference.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceGramStats {
    pub group: String,
    pub order: usize,
    pub traces: usize,
    pub avg_context_freq: f64,
    pub avg_continuation_freq: f64,
    /// Mean of `freq(gram ending at the first continuation token) −
    /// freq(gram ending at the last context token)`.
    pub boundary_diff: f64,
}

pub const GRAM_STATS_HEADER: &str =
    "group,order,traces,avg_context_freq,avg_continuation_freq,boundary_diff\n";

impl SequenceGramStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}\n",
            self.group,
            self.order,
            self.traces,
            fmt_real(self.avg_context_freq),
            fmt_real(self.avg_continuation_freq),
            fmt_real(self.boundary_diff)
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{GRAM_STATS_HEADER}{}", self.csv_row())
    }
}

fn check_inputs(traces: &TraceSet, counter: &NgramCounter) -> Result<(), NgramError> {
    if traces.is_empty() {
        return Err(NgramError::EmptyTraceSet);
    }
    if counter.order() > traces.context_len() {
        return Err(NgramError::OrderMismatch {
            expected: traces.context_len(),
            got: counter.order(),
        });
    }
    Ok(())
}

fn tokens_of(trace: &GenerationTrace, source: ContinuationSource) -> Vec<u32> {
    trace
        .context()
        .iter()
        .chain(trace.continuation(source))
        .map(|t| t.get())
        .collect()
}

/// Frequencies of the windows ending at each index `order − 1 ..`.
fn window_counts(counter: &NgramCounter, tokens: &[u32]) -> Vec<u64> {
    tokens
        .windows(counter.order())
        .map(|w| counter.count_window(w))
        .collect()
}

/// Per-index mean frequency over the cohort. Sums are exact integers, so
/// the result does not depend on how lookups were scheduled.
pub fn index_profile(
    traces: &TraceSet,
    counter: &NgramCounter,
    group: &str,
    source: ContinuationSource,
) -> Result<IndexProfile, NgramError> {
    check_inputs(traces, counter)?;
    let n = counter.order();
    let len = traces.context_len() + traces.continuation_len();
    let per_trace: Vec<Vec<u64>> = traces
        .traces()
        .par_iter()
        .map(|t| window_counts(counter, &tokens_of(t, source)))
        .collect();
    let mut sums = vec![0u128; len + 1 - n];
    for counts in &per_trace {
        for (s, &c) in sums.iter_mut().zip(counts) {
            *s += u128::from(c);
        }
    }
    let denom = traces.len() as f64;
    let mut per_index_mean = vec![None; n - 1];
    per_index_mean.extend(sums.iter().map(|&s| Some(s as f64 / denom)));
    Ok(IndexProfile {
        group: group.to_string(),
        order: n,
        source,
        traces: traces.len(),
        per_index_mean,
    })
}

/// Sequence-level frequency summary over the true continuation.
pub fn sequence_gram_stats(
    traces: &TraceSet,
    counter: &NgramCounter,
    group: &str,
) -> Result<SequenceGramStats, NgramError> {
    check_inputs(traces, counter)?;
    let n = counter.order();
    let ctx = traces.context_len();
    // Window j ends at absolute index j + n − 1.
    let first_cont_window = ctx + 1 - n;
    let per_trace: Vec<(u128, u128, i128)> = traces
        .traces()
        .par_iter()
        .map(|t| {
            let w = window_counts(counter, &tokens_of(t, ContinuationSource::True));
            let ctx_sum: u128 = w[..first_cont_window].iter().map(|&c| u128::from(c)).sum();
            let cont_sum: u128 = w[first_cont_window..].iter().map(|&c| u128::from(c)).sum();
            let diff = i128::from(w[first_cont_window]) - i128::from(w[first_cont_window - 1]);
            (ctx_sum, cont_sum, diff)
        })
        .collect();
    let (ctx_total, cont_total, diff_total) = per_trace
        .iter()
        .fold((0u128, 0u128, 0i128), |(a, b, c), &(x, y, z)| (a + x, b + y, c + z));
    let nt = traces.len() as f64;
    let ctx_windows = (first_cont_window * traces.len()) as f64;
    let cont_windows = (traces.continuation_len() * traces.len()) as f64;
    Ok(SequenceGramStats {
        group: group.to_string(),
        order: n,
        traces: traces.len(),
        avg_context_freq: ctx_total as f64 / ctx_windows,
        avg_continuation_freq: cont_total as f64 / cont_windows,
        boundary_diff: diff_total as f64 / nt,
    })
}
