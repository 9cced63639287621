//! Generation traces: the portable record of one scored greedy generation.
//!
//! A trace file is JSON Lines, one record per line. Records are decoded into
//! [`TraceRecord`], checked by [`validate_trace`], and become immutable
//! [`GenerationTrace`] values. Analysis code never sees an unvalidated record.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Record layout version written and accepted by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Slack allowed above `ln(vocab_size)` when checking stored entropies.
pub const ENTROPY_SLACK: f64 = 1e-9;

/// A token id. Validity against a vocabulary is checked when a trace is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// Identity of the model that produced a trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelMeta {
    pub label: String,
    pub vocab_size: u32,
    pub hidden_size: usize,
}

impl ModelMeta {
    pub fn new(label: impl Into<String>, vocab_size: u32, hidden_size: usize) -> Self {
        ModelMeta {
            label: label.into(),
            vocab_size,
            hidden_size,
        }
    }

    pub fn max_entropy(&self) -> f64 {
        f64::from(self.vocab_size).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
}

/// Which continuation a per-position analysis reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContinuationSource {
    #[default]
    True,
    Generated,
}

/// The on-disk record, exactly as it appears on one line of a trace file.
///
/// `decode_mode` is kept as a raw string so an unknown mode surfaces as
/// [`TraceError::BadDecodeMode`] rather than a generic parse failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub schema_version: u32,
    pub sequence_id: String,
    pub corpus_index: u64,
    pub model: ModelMeta,
    pub context: Vec<u32>,
    pub true_continuation: Vec<u32>,
    pub generated_continuation: Vec<u32>,
    pub step_entropy: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_embedding: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_entropy: Option<Vec<f64>>,
    pub decode_mode: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("invalid model metadata: {0}")]
    BadModel(String),
    #[error("sequence_id must be non-empty")]
    EmptySequenceId,
    #[error("context must be non-empty")]
    EmptyContext,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("token {token} in {field} at position {position} is outside vocab of size {vocab_size}")]
    TokenOutOfRange {
        field: &'static str,
        position: usize,
        token: u32,
        vocab_size: u32,
    },
    #[error("entropy {value} in {field} at position {position} is outside [0, {max}]")]
    EntropyOutOfRange {
        field: &'static str,
        position: usize,
        value: f64,
        max: f64,
    },
    #[error("non-finite embedding value at step {step}, dimension {dim}")]
    NonFiniteEmbedding { step: usize, dim: usize },
    #[error("decode_mode must be \"greedy\", got {0:?}")]
    BadDecodeMode(String),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<TraceError>,
    },
    #[error("read error: {0}")]
    Io(String),
}

impl TraceError {
    /// Line number for errors raised while reading a stream.
    pub fn line(&self) -> Option<usize> {
        match self {
            TraceError::Parse { line, .. } | TraceError::AtLine { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// One validated generation. Fields are private so every instance upholds
/// the length, range and decode-mode invariants checked in [`validate_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    sequence_id: String,
    corpus_index: u64,
    model: ModelMeta,
    context: Vec<TokenId>,
    true_continuation: Vec<TokenId>,
    generated_continuation: Vec<TokenId>,
    step_entropy: Vec<f64>,
    step_embedding: Option<Vec<Vec<f64>>>,
    context_entropy: Option<Vec<f64>>,
    decode_mode: DecodeMode,
}

fn check_tokens(field: &'static str, tokens: &[u32], vocab_size: u32) -> Result<Vec<TokenId>, TraceError> {
    tokens
        .iter()
        .enumerate()
        .map(|(position, &token)| {
            if token < vocab_size {
                Ok(TokenId(token))
            } else {
                Err(TraceError::TokenOutOfRange {
                    field,
                    position,
                    token,
                    vocab_size,
                })
            }
        })
        .collect()
}

fn check_entropies(field: &'static str, values: &[f64], max: f64) -> Result<(), TraceError> {
    for (position, &value) in values.iter().enumerate() {
        // NaN fails both comparisons.
        if !(value >= 0.0 && value <= max + ENTROPY_SLACK) {
            return Err(TraceError::EntropyOutOfRange {
                field,
                position,
                value,
                max,
            });
        }
    }
    Ok(())
}

/// Checks a decoded record against every trace invariant.
pub fn validate_trace(raw: TraceRecord) -> Result<GenerationTrace, TraceError> {
    if raw.schema_version != SCHEMA_VERSION {
        return Err(TraceError::SchemaVersion(raw.schema_version));
    }
    if raw.decode_mode != "greedy" {
        return Err(TraceError::BadDecodeMode(raw.decode_mode));
    }
    let model = raw.model;
    if model.label.is_empty() {
        return Err(TraceError::BadModel("label is empty".into()));
    }
    if model.vocab_size < 2 {
        return Err(TraceError::BadModel(format!(
            "vocab_size must be at least 2, got {}",
            model.vocab_size
        )));
    }
    if model.hidden_size < 1 {
        return Err(TraceError::BadModel("hidden_size must be at least 1".into()));
    }
    if raw.sequence_id.is_empty() {
        return Err(TraceError::EmptySequenceId);
    }
    if raw.context.is_empty() {
        return Err(TraceError::EmptyContext);
    }

    let n = raw.true_continuation.len();
    if n == 0 {
        return Err(TraceError::LengthMismatch(
            "true_continuation must be non-empty".into(),
        ));
    }
    if raw.generated_continuation.len() != n {
        return Err(TraceError::LengthMismatch(format!(
            "true_continuation has {n} tokens but generated_continuation has {}",
            raw.generated_continuation.len()
        )));
    }
    if raw.step_entropy.len() != n {
        return Err(TraceError::LengthMismatch(format!(
            "continuation has {n} tokens but step_entropy has {} values",
            raw.step_entropy.len()
        )));
    }
    if let Some(emb) = &raw.step_embedding {
        if emb.len() != n {
            return Err(TraceError::LengthMismatch(format!(
                "continuation has {n} tokens but step_embedding has {} vectors",
                emb.len()
            )));
        }
        for (step, v) in emb.iter().enumerate() {
            if v.len() != model.hidden_size {
                return Err(TraceError::LengthMismatch(format!(
                    "step_embedding[{step}] has length {} but hidden_size is {}",
                    v.len(),
                    model.hidden_size
                )));
            }
            if let Some(dim) = v.iter().position(|x| !x.is_finite()) {
                return Err(TraceError::NonFiniteEmbedding { step, dim });
            }
        }
    }
    if let Some(ce) = &raw.context_entropy {
        if ce.len() != raw.context.len() {
            return Err(TraceError::LengthMismatch(format!(
                "context has {} tokens but context_entropy has {} values",
                raw.context.len(),
                ce.len()
            )));
        }
    }

    let vocab = model.vocab_size;
    let context = check_tokens("context", &raw.context, vocab)?;
    let true_continuation = check_tokens("true_continuation", &raw.true_continuation, vocab)?;
    let generated_continuation =
        check_tokens("generated_continuation", &raw.generated_continuation, vocab)?;

    let max = model.max_entropy();
    check_entropies("step_entropy", &raw.step_entropy, max)?;
    if let Some(ce) = &raw.context_entropy {
        check_entropies("context_entropy", ce, max)?;
    }

    Ok(GenerationTrace {
        sequence_id: raw.sequence_id,
        corpus_index: raw.corpus_index,
        model,
        context,
        true_continuation,
        generated_continuation,
        step_entropy: raw.step_entropy,
        step_embedding: raw.step_embedding,
        context_entropy: raw.context_entropy,
        decode_mode: DecodeMode::Greedy,
    })
}

impl GenerationTrace {
    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }

    pub fn corpus_index(&self) -> u64 {
        self.corpus_index
    }

    pub fn model(&self) -> &ModelMeta {
        &self.model
    }

    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    pub fn true_continuation(&self) -> &[TokenId] {
        &self.true_continuation
    }

    pub fn generated_continuation(&self) -> &[TokenId] {
        &self.generated_continuation
    }

    pub fn continuation(&self, source: ContinuationSource) -> &[TokenId] {
        match source {
            ContinuationSource::True => &self.true_continuation,
            ContinuationSource::Generated => &self.generated_continuation,
        }
    }

    pub fn step_entropy(&self) -> &[f64] {
        &self.step_entropy
    }

    pub fn step_embedding(&self) -> Option<&[Vec<f64>]> {
        self.step_embedding.as_deref()
    }

    pub fn context_entropy(&self) -> Option<&[f64]> {
        self.context_entropy.as_deref()
    }

    pub fn decode_mode(&self) -> DecodeMode {
        self.decode_mode
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    pub fn continuation_len(&self) -> usize {
        self.true_continuation.len()
    }

    /// Number of positions where the generated token equals the true token.
    pub fn matched_tokens(&self) -> usize {
        self.true_continuation
            .iter()
            .zip(&self.generated_continuation)
            .filter(|(a, b)| a == b)
            .count()
    }

    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            schema_version: SCHEMA_VERSION,
            sequence_id: self.sequence_id.clone(),
            corpus_index: self.corpus_index,
            model: self.model.clone(),
            context: self.context.iter().map(|t| t.0).collect(),
            true_continuation: self.true_continuation.iter().map(|t| t.0).collect(),
            generated_continuation: self.generated_continuation.iter().map(|t| t.0).collect(),
            step_entropy: self.step_entropy.clone(),
            step_embedding: self.step_embedding.clone(),
            context_entropy: self.context_entropy.clone(),
            decode_mode: "greedy".into(),
        }
    }

    /// Copy of this trace without per-step embeddings.
    pub fn without_embeddings(&self) -> GenerationTrace {
        GenerationTrace {
            step_embedding: None,
            ..self.clone()
        }
    }
}

/// Parses and validates one line of a trace file.
pub fn parse_trace_line(line: &str) -> Result<GenerationTrace, TraceError> {
    let record: TraceRecord = serde_json::from_str(line).map_err(|e| TraceError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    validate_trace(record)
}

/// Lazily reads traces from a JSON Lines source in file order.
///
/// Blank lines are ignored. Every other line either yields a trace or an
/// error carrying its 1-based line number; iteration continues after an
/// error so callers may collect all of them.
pub fn read_trace_stream<R: BufRead>(source: R) -> TraceStream<R> {
    TraceStream {
        source,
        line_no: 0,
        buf: String::new(),
        done: false,
    }
}

pub struct TraceStream<R> {
    source: R,
    line_no: usize,
    buf: String,
    done: bool,
}

impl<R: BufRead> Iterator for TraceStream<R> {
    type Item = Result<GenerationTrace, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.source.read_line(&mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let line_no = self.line_no;
                    let parsed = serde_json::from_str::<TraceRecord>(line)
                        .map_err(|e| TraceError::Parse {
                            line: line_no,
                            message: e.to_string(),
                        })
                        .and_then(|rec| {
                            validate_trace(rec).map_err(|e| TraceError::AtLine {
                                line: line_no,
                                source: Box::new(e),
                            })
                        });
                    return Some(parsed);
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(TraceError::Io(format!(
                        "after line {}: {e}",
                        self.line_no
                    ))));
                }
            }
        }
        None
    }
}

/// Writes one trace as a single JSON line.
pub fn write_trace<W: Write>(out: &mut W, trace: &GenerationTrace) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, &trace.to_record())?;
    out.write_all(b"\n")
}

pub fn write_traces<'a, W, I>(out: &mut W, traces: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a GenerationTrace>,
{
    for t in traces {
        write_trace(out, t)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceSetError {
    #[error("trace {sequence_id} has lengths ({got_context}, {got_continuation}) but the set uses ({context}, {continuation})")]
    InconsistentLengths {
        sequence_id: String,
        context: usize,
        continuation: usize,
        got_context: usize,
        got_continuation: usize,
    },
    #[error("duplicate sequence_id {0}")]
    DuplicateSequenceId(String),
}

/// An ordered collection of traces sharing context and continuation lengths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    traces: Vec<GenerationTrace>,
    context_len: usize,
    continuation_len: usize,
}

impl TraceSet {
    pub fn new(traces: Vec<GenerationTrace>) -> Result<Self, TraceSetError> {
        let (context_len, continuation_len) = traces
            .first()
            .map(|t| (t.context_len(), t.continuation_len()))
            .unwrap_or((0, 0));
        let mut seen = HashSet::with_capacity(traces.len());
        for t in &traces {
            if t.context_len() != context_len || t.continuation_len() != continuation_len {
                return Err(TraceSetError::InconsistentLengths {
                    sequence_id: t.sequence_id.clone(),
                    context: context_len,
                    continuation: continuation_len,
                    got_context: t.context_len(),
                    got_continuation: t.continuation_len(),
                });
            }
            if !seen.insert(t.sequence_id.as_str()) {
                return Err(TraceSetError::DuplicateSequenceId(t.sequence_id.clone()));
            }
        }
        Ok(TraceSet {
            traces,
            context_len,
            continuation_len,
        })
    }

    pub fn traces(&self) -> &[GenerationTrace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<GenerationTrace> {
        self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Shared context length; 0 for an empty set.
    pub fn context_len(&self) -> usize {
        self.context_len
    }

    /// Shared continuation length; 0 for an empty set.
    pub fn continuation_len(&self) -> usize {
        self.continuation_len
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GenerationTrace> {
        self.traces.iter()
    }

    /// Subset of traces satisfying `keep`, preserving order.
    pub fn filter<F>(&self, mut keep: F) -> TraceSet
    where
        F: FnMut(&GenerationTrace) -> bool,
    {
        let traces: Vec<_> = self.traces.iter().filter(|t| keep(t)).cloned().collect();
        let (context_len, continuation_len) = if traces.is_empty() {
            (0, 0)
        } else {
            (self.context_len, self.continuation_len)
        };
        TraceSet {
            traces,
            context_len,
            continuation_len,
        }
    }
}

impl<'a> IntoIterator for &'a TraceSet {
    type Item = &'a GenerationTrace;
    type IntoIter = std::slice::Iter<'a, GenerationTrace>;

    fn into_iter(self) -> Self::IntoIter {
        self.traces.iter()
    }
}
