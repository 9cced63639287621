//! Per-token memorization predictor: features, a small encoder trained with
//! Adam, and token/full accuracy evaluation.

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ngram::{NgramCounter, NgramError};
use crate::report::fmt_real;
use crate::scoring::{BinHistogram, MemorizationBinning, MemorizationScore};
use crate::trace::{GenerationTrace, TraceSet};

pub mod model;
pub mod synthetic;
pub mod train;

pub use model::{param_count, Architecture, PredictorModel};
pub use train::{grad_check, grad_check_with, loss_and_grad, mean_loss, train, GradCheck, TrainConfig, TrainOutcome, Trainer};

/// Statistics appended after the embedding: entropy, log unigram
/// frequency, normalized index.
pub const EXTRA_FEATURES: usize = 3;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("trace {0} has no step embeddings")]
    MissingEmbeddings(String),
    #[error("feature dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sequence {0} has {1} labels for {2} feature rows")]
    LabelMismatch(String, usize, usize),
    #[error("{0} gold sequences but {1} predicted")]
    SequenceCountMismatch(usize, usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("gradient is not finite")]
    NonFiniteGradient,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("frequency counter must have order 1, got {0}")]
    CounterOrder(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Features and gold labels of one generated continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub sequence_id: String,
    pub features: Vec<Vec<f64>>,
    /// True where the generated token equals the true token.
    pub labels: Vec<bool>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Memorization score implied by the labels.
    pub fn score(&self) -> MemorizationScore {
        MemorizationScore::new(
            self.labels.iter().filter(|&&l| l).count() as u32,
            self.labels.len() as u32,
        )
    }
}

/// Common feature dimension of a non-empty dataset.
pub(crate) fn check_dataset(data: &[FeatureSequence]) -> Result<usize, PredictorError> {
    let first = data.first().ok_or(PredictorError::EmptyDataset)?;
    let d = first.dim();
    for s in data {
        if s.features.len() != s.labels.len() || s.is_empty() {
            return Err(PredictorError::LabelMismatch(
                s.sequence_id.clone(),
                s.labels.len(),
                s.features.len(),
            ));
        }
        if let Some(r) = s.features.iter().find(|r| r.len() != d) {
            return Err(PredictorError::DimensionMismatch { expected: d, got: r.len() });
        }
    }
    Ok(d)
}

/// `embedding ‖ [entropy, ln(1 + unigram count of generated token), s/(len−1)]`
/// for each continuation step.
pub fn featurize(trace: &GenerationTrace, unigrams: &NgramCounter) -> Result<FeatureSequence, PredictorError> {
    if unigrams.order() != 1 {
        return Err(PredictorError::CounterOrder(unigrams.order()));
    }
    let emb = trace
        .step_embedding()
        .ok_or_else(|| PredictorError::MissingEmbeddings(trace.sequence_id().to_string()))?;
    let len = trace.continuation_len();
    let denom = if len > 1 { (len - 1) as f64 } else { 1.0 };
    let gen = trace.generated_continuation();
    let truth = trace.true_continuation();
    let features = (0..len)
        .map(|s| {
            let mut row = Vec::with_capacity(emb[s].len() + EXTRA_FEATURES);
            row.extend_from_slice(&emb[s]);
            row.push(trace.step_entropy()[s]);
            row.push((unigrams.count_window(&[gen[s].get()]) as f64).ln_1p());
            row.push(s as f64 / denom);
            row
        })
        .collect();
    Ok(FeatureSequence {
        sequence_id: trace.sequence_id().to_string(),
        features,
        labels: gen.iter().zip(truth).map(|(g, t)| g == t).collect(),
    })
}

/// Featurizes every trace, in trace order.
pub fn featurize_set(traces: &TraceSet, unigrams: &NgramCounter) -> Result<Vec<FeatureSequence>, PredictorError> {
    traces.traces().par_iter().map(|t| featurize(t, unigrams)).collect()
}

/// True if `sequence_id` falls in the held-out tenth for `seed`.
pub fn is_held_out(sequence_id: &str, seed: u64) -> bool {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sequence_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap()) % 10 == 0
}

/// Splits into (train, held-out) by hashed sequence id, preserving order.
pub fn split_by_id(data: Vec<FeatureSequence>, seed: u64) -> (Vec<FeatureSequence>, Vec<FeatureSequence>) {
    data.into_iter().partition(|s| !is_held_out(&s.sequence_id, seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub labels: Vec<bool>,
}

const PROB_FLOOR: f64 = f64::MIN_POSITIVE;
const PROB_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Per-step probability of "memorized"; label is `p ≥ 0.5`.
pub fn predict(model: &PredictorModel, seq: &FeatureSequence) -> Result<Prediction, PredictorError> {
    let probabilities: Vec<f64> = model
        .logits(&seq.features)?
        .into_iter()
        .map(|z| model::sigmoid(z).clamp(PROB_FLOOR, PROB_CEIL))
        .collect();
    let labels = probabilities.iter().map(|&p| p >= 0.5).collect();
    Ok(Prediction { probabilities, labels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sequences: usize,
    pub tokens: usize,
    pub tokens_correct: usize,
    pub sequences_correct: usize,
    pub token_accuracy: f64,
    pub full_accuracy: f64,
    /// Common sequence length, if all sequences share one.
    pub length: Option<usize>,
    /// Fully correct sequences, binned by their gold memorization score.
    pub full_correct_by_bin: BinHistogram,
}

impl EvalReport {
    pub const TABLE_HEADER: &'static str = "length,token_acc,full_acc\n";

    pub fn table_row(&self) -> String {
        format!(
            "{},{},{}\n",
            self.length.map(|l| l.to_string()).unwrap_or_default(),
            fmt_real(self.token_accuracy),
            fmt_real(self.full_accuracy)
        )
    }

    pub fn table_csv(&self) -> String {
        format!("{}{}", Self::TABLE_HEADER, self.table_row())
    }

    pub fn by_bin_csv(&self) -> String {
        self.full_correct_by_bin.to_csv()
    }
}

/// Token and full accuracy of predicted against gold label sequences.
pub fn accuracy_report<G, P>(gold: &[G], pred: &[P], scheme: MemorizationBinning) -> Result<EvalReport, PredictorError>
where
    G: AsRef<[bool]>,
    P: AsRef<[bool]>,
{
    if gold.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    if gold.len() != pred.len() {
        return Err(PredictorError::SequenceCountMismatch(gold.len(), pred.len()));
    }
    let mut tokens = 0;
    let mut tokens_correct = 0;
    let mut sequences_correct = 0;
    let mut full_correct_by_bin = BinHistogram::empty(scheme);
    let first_len = gold[0].as_ref().len();
    let mut same_len = true;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() || g.is_empty() {
            return Err(PredictorError::LabelMismatch(format!("#{i}"), p.len(), g.len()));
        }
        same_len &= g.len() == first_len;
        let correct = g.iter().zip(p).filter(|(a, b)| a == b).count();
        tokens += g.len();
        tokens_correct += correct;
        if correct == g.len() {
            sequences_correct += 1;
            let score = MemorizationScore::new(g.iter().filter(|&&x| x).count() as u32, g.len() as u32);
            full_correct_by_bin.counts[scheme.bin_index(score)] += 1;
        }
    }
    Ok(EvalReport {
        sequences: gold.len(),
        tokens,
        tokens_correct,
        sequences_correct,
        token_accuracy: tokens_correct as f64 / tokens as f64,
        full_accuracy: sequences_correct as f64 / gold.len() as f64,
        length: same_len.then_some(first_len),
        full_correct_by_bin,
    })
}

/// Predicts every sequence and scores the predictions.
pub fn evaluate(
    model: &PredictorModel,
    dataset: &[FeatureSequence],
    scheme: MemorizationBinning,
) -> Result<EvalReport, PredictorError> {
    check_dataset(dataset)?;
    let preds: Vec<Vec<bool>> = dataset
        .par_iter()
        .map(|s| predict(model, s).map(|p| p.labels))
        .collect::<Result<_, _>>()?;
    let gold: Vec<&[bool]> = dataset.iter().map(|s| s.labels.as_slice()).collect();
    accuracy_report(&gold, &preds, scheme)
}
