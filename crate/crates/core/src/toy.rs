//! A deterministic trie language model that replays its training text.
//!
//! The model stores, for every context suffix shorter than `max_order`, the
//! counts of the tokens that followed it in training. Generation looks up
//! the longest suffix of the running history that was seen, backing off by
//! dropping the leftmost token down to the empty (unigram) context, and
//! emits the most frequent successor (smallest id on ties).
//!
//! It stands in for a pretrained model in tests and fixtures: text seen once
//! with an unambiguous suffix is reproduced verbatim with zero entropy.
//!
//! The per-step "state vector" is synthetic. For `embedding_dim = d` it holds
//! the `d − d/2` largest successor probabilities in descending order
//! followed by the ids of the `d/2` most probable successors divided by
//! `vocab_size`, zero-padded.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::shannon_entropy;
use crate::trace::{validate_trace, ModelMeta, TraceError, TraceRecord, TraceSet, TraceSetError};

pub const DEFAULT_MAX_ORDER: usize = 8;
pub const DEFAULT_EMBEDDING_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("max_order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("embedding_dim must be at least 1")]
    InvalidEmbeddingDim,
    #[error("token {token} in document {document} is outside vocab of size {vocab_size}")]
    TokenOutOfRange {
        token: u32,
        vocab_size: u32,
        document: usize,
    },
    #[error("context must be non-empty")]
    EmptyContext,
    #[error("sequence {sequence_id} has {len} tokens, need {needed}")]
    SequenceTooShort {
        sequence_id: String,
        len: usize,
        needed: usize,
    },
    #[error("invalid trace for {sequence_id}: {source}")]
    Trace {
        sequence_id: String,
        #[source]
        source: TraceError,
    },
    #[error(transparent)]
    TraceSet(#[from] TraceSetError),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrieModel {
    max_order: usize,
    vocab_size: u32,
    embedding_dim: usize,
    total_tokens: u64,
    /// Context suffix (length < `max_order`) → successor counts.
    nodes: HashMap<Vec<u32>, BTreeMap<u32, u64>>,
}

/// Sparse next-token distribution: `(token, probability)` sorted by token.
pub type SparseDist = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub distributions: Vec<SparseDist>,
    pub states: Vec<Vec<f64>>,
    /// Length of the context suffix matched at each step.
    pub matched_orders: Vec<usize>,
}

/// Builds the trie from training documents. Contexts never span documents.
pub fn fit_trie<D: AsRef<[u32]>>(
    corpus: &[D],
    max_order: usize,
    vocab_size: u32,
    embedding_dim: usize,
) -> Result<TrieModel, ToyError> {
    if max_order < 2 {
        return Err(ToyError::InvalidOrder(max_order));
    }
    if embedding_dim < 1 {
        return Err(ToyError::InvalidEmbeddingDim);
    }
    let mut nodes: HashMap<Vec<u32>, BTreeMap<u32, u64>> = HashMap::new();
    let mut total_tokens = 0u64;
    for (d, doc) in corpus.iter().enumerate() {
        let doc = doc.as_ref();
        if let Some(&token) = doc.iter().find(|&&t| t >= vocab_size) {
            return Err(ToyError::TokenOutOfRange {
                token,
                vocab_size,
                document: d,
            });
        }
        for j in 0..doc.len() {
            let next = doc[j];
            for o in 0..=j.min(max_order - 1) {
                *nodes
                    .entry(doc[j - o..j].to_vec())
                    .or_default()
                    .entry(next)
                    .or_insert(0) += 1;
            }
        }
        total_tokens += doc.len() as u64;
    }
    if total_tokens == 0 {
        return Err(ToyError::EmptyCorpus);
    }
    Ok(TrieModel {
        max_order,
        vocab_size,
        embedding_dim,
        total_tokens,
        nodes,
    })
}

impl TrieModel {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn successors(&self, context: &[u32]) -> Option<&BTreeMap<u32, u64>> {
        self.nodes.get(context)
    }

    /// Longest seen suffix of `history` (at most `max_order − 1` tokens).
    fn lookup<'a>(&'a self, history: &[u32]) -> (usize, &'a BTreeMap<u32, u64>) {
        let longest = history.len().min(self.max_order - 1);
        for o in (0..=longest).rev() {
            if let Some(s) = self.nodes.get(&history[history.len() - o..]) {
                return (o, s);
            }
        }
        unreachable!("the root context is present in every fitted model")
    }

    fn state_vector(&self, dist: &SparseDist) -> Vec<f64> {
        let mut ranked: Vec<(u32, f64)> = dist.clone();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let ids = self.embedding_dim / 2;
        let masses = self.embedding_dim - ids;
        let mut state = vec![0.0; self.embedding_dim];
        for (slot, (_, p)) in state.iter_mut().take(masses).zip(&ranked) {
            *slot = *p;
        }
        for (slot, (t, _)) in state[masses..].iter_mut().zip(&ranked) {
            *slot = f64::from(*t) / f64::from(self.vocab_size);
        }
        state
    }

    pub fn to_json(&self) -> String {
        let mut nodes: Vec<JsonNode> = self
            .nodes
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|(&t, &c)| (t, c)).collect()))
            .collect();
        nodes.sort();
        serde_json::to_string(&TrieFile {
            format: "memscope-trie".into(),
            version: 1,
            max_order: self.max_order,
            vocab_size: self.vocab_size,
            embedding_dim: self.embedding_dim,
            total_tokens: self.total_tokens,
            nodes,
        })
        .expect("trie serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ToyError> {
        let f: TrieFile = serde_json::from_str(text).map_err(|e| ToyError::Format(e.to_string()))?;
        if f.format != "memscope-trie" || f.version != 1 {
            return Err(ToyError::Format(format!("unsupported format {} v{}", f.format, f.version)));
        }
        if f.max_order < 2 {
            return Err(ToyError::InvalidOrder(f.max_order));
        }
        if f.embedding_dim < 1 {
            return Err(ToyError::InvalidEmbeddingDim);
        }
        let mut nodes = HashMap::with_capacity(f.nodes.len());
        for (ctx, succ) in f.nodes {
            if ctx.len() >= f.max_order || succ.is_empty() || succ.iter().any(|&(t, c)| c == 0 || t >= f.vocab_size) {
                return Err(ToyError::Format(format!("invalid node {ctx:?}")));
            }
            nodes.insert(ctx, succ.into_iter().collect::<BTreeMap<_, _>>());
        }
        let root_total: u64 = nodes.get(&Vec::new()).map_or(0, |s| s.values().sum());
        if root_total != f.total_tokens || root_total == 0 {
            return Err(ToyError::Format("root counts do not match total_tokens".into()));
        }
        Ok(TrieModel {
            max_order: f.max_order,
            vocab_size: f.vocab_size,
            embedding_dim: f.embedding_dim,
            total_tokens: f.total_tokens,
            nodes,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TrieFile {
    format: String,
    version: u32,
    max_order: usize,
    vocab_size: u32,
    embedding_dim: usize,
    total_tokens: u64,
    nodes: Vec<JsonNode>,
}

type JsonNode = (Vec<u32>, Vec<(u32, u64)>);

/// Greedily extends `context` by `n` tokens.
pub fn generate_greedy(model: &TrieModel, context: &[u32], n: usize) -> Result<Generation, ToyError> {
    if context.is_empty() {
        return Err(ToyError::EmptyContext);
    }
    let mut history = context.to_vec();
    let mut out = Generation {
        tokens: Vec::with_capacity(n),
        distributions: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        matched_orders: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let (order, succ) = model.lookup(&history);
        let total: u64 = succ.values().sum();
        let dist: SparseDist = succ
            .iter()
            .map(|(&t, &c)| (t, c as f64 / total as f64))
            .collect();
        // BTreeMap iterates ascending, so the first maximum is the smallest id.
        let (&next, _) = succ
            .iter()
            .fold(None, |best: Option<(&u32, &u64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .expect("successor maps are non-empty");
        out.states.push(model.state_vector(&dist));
        out.distributions.push(dist);
        out.tokens.push(next);
        out.matched_orders.push(order);
        history.push(next);
    }
    Ok(out)
}

/// Entropy (nats) of a sparse distribution.
pub fn sparse_entropy(dist: &SparseDist) -> f64 {
    let p: Vec<f64> = dist.iter().map(|&(_, p)| p).collect();
    shannon_entropy(&p).expect("trie distributions are normalized")
}

/// A held-out or training sequence to be prompted.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSequence {
    pub sequence_id: String,
    pub corpus_index: u64,
    pub tokens: Vec<u32>,
}

/// Numbers documents in order as `seq-000000`, `seq-000001`, ...
pub fn eval_sequences<D: AsRef<[u32]>>(docs: &[D]) -> Vec<EvalSequence> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| EvalSequence {
            sequence_id: format!("seq-{i:06}"),
            corpus_index: i as u64,
            tokens: d.as_ref().to_vec(),
        })
        .collect()
}

/// Prompts the model with the first `context_len` tokens of each sequence
/// and records the greedy continuation as a trace.
pub fn make_traces(
    model: &TrieModel,
    eval: &[EvalSequence],
    context_len: usize,
    continuation_len: usize,
    label: &str,
) -> Result<TraceSet, ToyError> {
    let needed = context_len + continuation_len;
    let meta = ModelMeta::new(label, model.vocab_size, model.embedding_dim);
    let traces = eval
        .par_iter()
        .map(|seq| {
            if seq.tokens.len() < needed || context_len == 0 || continuation_len == 0 {
                return Err(ToyError::SequenceTooShort {
                    sequence_id: seq.sequence_id.clone(),
                    len: seq.tokens.len(),
                    needed,
                });
            }
            let context = &seq.tokens[..context_len];
            let truth = &seq.tokens[context_len..needed];
            let gen = generate_greedy(model, context, continuation_len)?;
            let record = TraceRecord {
                schema_version: crate::trace::SCHEMA_VERSION,
                sequence_id: seq.sequence_id.clone(),
                corpus_index: seq.corpus_index,
                model: meta.clone(),
                context: context.to_vec(),
                true_continuation: truth.to_vec(),
                generated_continuation: gen.tokens,
                step_entropy: gen.distributions.iter().map(sparse_entropy).collect(),
                step_embedding: Some(gen.states),
                context_entropy: None,
                decode_mode: "greedy".into(),
            };
            validate_trace(record).map_err(|source| ToyError::Trace {
                sequence_id: seq.sequence_id.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TraceSet::new(traces)?)
}
