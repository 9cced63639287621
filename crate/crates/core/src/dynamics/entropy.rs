//! Entropy of next-token distributions, in nats.

use super::DynamicsError;
use crate::report::fmt_real;
use crate::scoring::Cohort;
use crate::trace::TraceSet;

/// Tolerance on the total mass of a distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// `−Σ p ln p` with `0 · ln 0 = 0`.
// The negated comparisons also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn shannon_entropy(dist: &[f64]) -> Result<f64, DynamicsError> {
    if let Some((index, &value)) = dist.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
        return Err(DynamicsError::NegativeMass { index, value });
    }
    let sum: f64 = dist.iter().sum();
    if !((sum - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
        return Err(DynamicsError::NotNormalized { sum });
    }
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // Rounding can leave a tiny negative value for one-hot inputs.
    Ok(h.max(0.0))
}

/// Mean entropy at each index for one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub group: String,
    pub traces: usize,
    /// Number of leading context positions, 0 when only continuation steps
    /// are profiled.
    pub context_len: usize,
    pub per_index_mean_entropy: Vec<f64>,
}

pub const ENTROPY_CSV_HEADER: &str = "group,index,mean_entropy_nats\n";

impl EntropyProfile {
    pub fn append_csv_rows(&self, out: &mut String) {
        for (i, e) in self.per_index_mean_entropy.iter().enumerate() {
            out.push_str(&format!("{},{i},{}\n", self.group, fmt_real(*e)));
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ENTROPY_CSV_HEADER);
        self.append_csv_rows(&mut out);
        out
    }
}

/// Per-index mean of stored step entropies. With `include_context`, the
/// profile is prefixed by mean context entropies, which every trace must
/// then carry.
pub fn entropy_profile(
    traces: &TraceSet,
    group: &str,
    include_context: bool,
) -> Result<EntropyProfile, DynamicsError> {
    if traces.is_empty() {
        return Err(DynamicsError::EmptyGroup(group.to_string()));
    }
    let context_len = if include_context { traces.context_len() } else { 0 };
    let mut sums = vec![0.0f64; context_len + traces.continuation_len()];
    for t in traces {
        if include_context {
            let ce = t
                .context_entropy()
                .ok_or_else(|| DynamicsError::MissingContextEntropy(t.sequence_id().to_string()))?;
            for (s, e) in sums.iter_mut().zip(ce) {
                *s += e;
            }
        }
        for (s, e) in sums[context_len..].iter_mut().zip(t.step_entropy()) {
            *s += e;
        }
    }
    let n = traces.len() as f64;
    Ok(EntropyProfile {
        group: group.to_string(),
        traces: traces.len(),
        context_len,
        per_index_mean_entropy: sums.into_iter().map(|s| s / n).collect(),
    })
}

/// Profiles of the standard cohorts (memorized, half, unmemorized) that have
/// at least one member.
pub fn cohort_entropy_profiles(traces: &TraceSet) -> Vec<EntropyProfile> {
    Cohort::STANDARD
        .iter()
        .filter_map(|c| entropy_profile(&c.select(traces), c.label(), false).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{validate_trace, GenerationTrace, ModelMeta, TraceRecord};
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert_eq!(shannon_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        for v in [2usize, 10, 1024] {
            let h = shannon_entropy(&vec![1.0 / v as f64; v]).unwrap();
            assert!((h - (v as f64).ln()).abs() < 1e-9, "V={v}");
        }
        assert!((shannon_entropy(&[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn invalid_distributions() {
        assert!(matches!(
            shannon_entropy(&[0.5, 0.4]),
            Err(DynamicsError::NotNormalized { .. })
        ));
        assert!(matches!(
            shannon_entropy(&[1.5, -0.5]),
            Err(DynamicsError::NegativeMass { index: 1, .. })
        ));
        assert!(matches!(shannon_entropy(&[]), Err(DynamicsError::NotNormalized { .. })));
        assert!(matches!(
            shannon_entropy(&[f64::NAN, 1.0]),
            Err(DynamicsError::NegativeMass { .. })
        ));
    }

    fn trace(id: &str, entropies: Vec<f64>, ctx_entropy: Option<Vec<f64>>) -> GenerationTrace {
        let n = entropies.len();
        validate_trace(TraceRecord {
            schema_version: 1,
            sequence_id: id.into(),
            corpus_index: 0,
            model: ModelMeta::new("m", 100, 1),
            context: vec![1, 2],
            true_continuation: vec![1; n],
            generated_continuation: vec![1; n],
            step_entropy: entropies,
            step_embedding: None,
            context_entropy: ctx_entropy,
            decode_mode: "greedy".into(),
        })
        .unwrap()
    }

    #[test]
    fn profile_means() {
        let set = TraceSet::new(vec![trace("a", vec![1.0, 0.5], None), trace("b", vec![3.0, 0.5], None)]).unwrap();
        let p = entropy_profile(&set, "m", false).unwrap();
        assert_eq!(p.per_index_mean_entropy, vec![2.0, 0.5]);

        let one = TraceSet::new(vec![trace("a", vec![0.25, 1.5], None)]).unwrap();
        assert_eq!(entropy_profile(&one, "m", false).unwrap().per_index_mean_entropy, vec![0.25, 1.5]);

        assert!(matches!(
            entropy_profile(&TraceSet::default(), "m", false),
            Err(DynamicsError::EmptyGroup(_))
        ));
    }

    #[test]
    fn context_prefix() {
        let set = TraceSet::new(vec![trace("a", vec![1.0], Some(vec![0.1, 0.2]))]).unwrap();
        let p = entropy_profile(&set, "m", true).unwrap();
        assert_eq!(p.context_len, 2);
        assert_eq!(p.per_index_mean_entropy, vec![0.1, 0.2, 1.0]);
        let missing = TraceSet::new(vec![trace("a", vec![1.0], None)]).unwrap();
        assert!(matches!(
            entropy_profile(&missing, "m", true),
            Err(DynamicsError::MissingContextEntropy(_))
        ));
    }

    proptest! {
        #[test]
        fn matches_direct_summation(weights in prop::collection::vec(0.0f64..1.0, 1..1024)) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 0.0);
            let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let s: f64 = p.iter().sum();
            prop_assume!((s - 1.0).abs() <= 1e-9);
            let mut direct = 0.0;
            for &x in &p {
                if x > 0.0 {
                    direct -= x * x.ln();
                }
            }
            let h = shannon_entropy(&p).unwrap();
            prop_assert!((h - direct).abs() <= 1e-9);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
        }
    }
}
