//! Exact 1/2/3-gram counting over tokenized corpora.
//!
//! Grams are packed into a single `u64` key with the first token in the most
//! significant bits, so numeric key order is lexicographic gram order. Orders
//! 1 and 2 use 32 bits per token; order 3 uses 21 bits per token, which caps
//! the vocabulary for trigram counting at 2^21 ids.
//!
//! Windows never cross document boundaries. Counters merge by pointwise
//! addition, so any sharding of a corpus at document boundaries gives the
//! same result as a single pass.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use rayon::prelude::*;
use thiserror::Error;

pub mod corpus;
pub mod snapshot;
pub mod stats;

pub use corpus::{read_corpus, read_corpus_header, write_corpus, CorpusHeader, CorpusReader};
pub use snapshot::{read_snapshot, write_snapshot, ExternalCounter};
pub use stats::{index_profile, sequence_gram_stats, IndexProfile, SequenceGramStats};

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("invalid n-gram order {0}; expected 1, 2 or 3")]
    InvalidOrder(usize),
    #[error("token {token} at document {document}, position {position} is outside vocab of size {vocab_size}")]
    TokenOutOfRange {
        token: u32,
        vocab_size: u32,
        document: u64,
        position: usize,
    },
    #[error("vocab size {vocab_size} does not fit the {bits}-bit packing used for order {order}")]
    VocabTooLarge { vocab_size: u32, order: usize, bits: u32 },
    #[error("order mismatch: expected {expected}, got {got}")]
    OrderMismatch { expected: usize, got: usize },
    #[error("empty trace set")]
    EmptyTraceSet,
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bits per token in the packed key for `order`.
pub fn bits_per_token(order: usize) -> u32 {
    match order {
        1 | 2 => 32,
        _ => 21,
    }
}

pub fn check_order(order: usize) -> Result<(), NgramError> {
    if (1..=3).contains(&order) {
        Ok(())
    } else {
        Err(NgramError::InvalidOrder(order))
    }
}

/// Largest vocabulary whose ids fit the packing for `order`.
pub fn max_vocab(order: usize) -> u64 {
    1u64 << bits_per_token(order)
}

/// An n-gram of order 1 to 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ngram {
    order: u8,
    tokens: [u32; 3],
}

impl Ngram {
    pub fn new(tokens: &[u32]) -> Result<Self, NgramError> {
        check_order(tokens.len())?;
        let mut buf = [0u32; 3];
        buf[..tokens.len()].copy_from_slice(tokens);
        Ok(Ngram {
            order: tokens.len() as u8,
            tokens: buf,
        })
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens[..self.order as usize]
    }

    /// Packed key. Tokens must fit the order's bit width.
    pub fn pack(&self) -> u64 {
        pack_window(self.tokens())
    }

    pub fn unpack(key: u64, order: usize) -> Result<Self, NgramError> {
        check_order(order)?;
        let bits = bits_per_token(order);
        let mask = (1u64 << bits) - 1;
        let mut tokens = [0u32; 3];
        for (i, slot) in tokens.iter_mut().take(order).enumerate() {
            let shift = bits * (order - 1 - i) as u32;
            *slot = ((key >> shift) & mask) as u32;
        }
        Ok(Ngram {
            order: order as u8,
            tokens,
        })
    }
}

#[inline]
pub(crate) fn pack_window(window: &[u32]) -> u64 {
    let bits = bits_per_token(window.len());
    window
        .iter()
        .fold(0u64, |acc, &t| acc.checked_shl(bits).unwrap_or(0) | u64::from(t))
}

/// Multiplicative mixer for packed keys; the keys are already dense integers
/// so a full SipHash is unnecessary.
#[derive(Default, Clone, Copy)]
pub struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, k: u64) {
        let mut z = k.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        self.0 = z ^ (z >> 31);
    }
}

pub type KeyMap = HashMap<u64, u64, BuildHasherDefault<KeyHasher>>;

/// Exact n-gram counts for one order.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramCounter {
    order: usize,
    counts: KeyMap,
    total_tokens_seen: u64,
    documents: u64,
}

impl NgramCounter {
    pub fn new(order: usize) -> Result<Self, NgramError> {
        check_order(order)?;
        Ok(NgramCounter {
            order,
            counts: KeyMap::default(),
            total_tokens_seen: 0,
            documents: 0,
        })
    }

    pub(crate) fn from_parts(order: usize, counts: KeyMap, total_tokens_seen: u64, documents: u64) -> Self {
        NgramCounter {
            order,
            counts,
            total_tokens_seen,
            documents,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn total_tokens_seen(&self) -> u64 {
        self.total_tokens_seen
    }

    pub fn documents(&self) -> u64 {
        self.documents
    }

    /// Number of distinct grams.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Sum of all gram counts.
    pub fn total_count(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// Counts every window of one document. Tokens must already be checked.
    pub(crate) fn add_document_unchecked(&mut self, doc: &[u32]) {
        self.documents += 1;
        self.total_tokens_seen += doc.len() as u64;
        if doc.len() < self.order {
            return;
        }
        for w in doc.windows(self.order) {
            *self.counts.entry(pack_window(w)).or_insert(0) += 1;
        }
    }

    pub fn add_document(&mut self, doc: &[u32], vocab_size: u32) -> Result<(), NgramError> {
        check_tokens(doc, vocab_size, self.documents)?;
        self.add_document_unchecked(doc);
        Ok(())
    }

    /// Count stored under a packed key; 0 when absent.
    #[inline]
    pub fn count_key(&self, key: u64) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    /// Count of the gram formed by `window`, whose length must equal the order.
    #[inline]
    pub fn count_window(&self, window: &[u32]) -> u64 {
        debug_assert_eq!(window.len(), self.order);
        if window.iter().any(|&t| u64::from(t) >= max_vocab(self.order)) {
            return 0;
        }
        self.count_key(pack_window(window))
    }

    /// `(packed_key, count)` pairs in ascending key order.
    pub fn sorted_entries(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<(u64, u64)> = self.counts.iter().map(|(&k, &c)| (k, c)).collect();
        v.sort_unstable_by_key(|e| e.0);
        v
    }

    pub(crate) fn clear_counts(&mut self) {
        self.counts.clear();
    }
}

fn check_tokens(doc: &[u32], vocab_size: u32, document: u64) -> Result<(), NgramError> {
    match doc.iter().position(|&t| t >= vocab_size) {
        Some(position) => Err(NgramError::TokenOutOfRange {
            token: doc[position],
            vocab_size,
            document,
            position,
        }),
        None => Ok(()),
    }
}

fn check_vocab(order: usize, vocab_size: u32) -> Result<(), NgramError> {
    check_order(order)?;
    if u64::from(vocab_size) > max_vocab(order) {
        return Err(NgramError::VocabTooLarge {
            vocab_size,
            order,
            bits: bits_per_token(order),
        });
    }
    Ok(())
}

/// Counts every length-`order` window inside each document.
pub fn count_ngrams<I, D>(corpus: I, order: usize, vocab_size: u32) -> Result<NgramCounter, NgramError>
where
    I: IntoIterator<Item = D>,
    D: AsRef<[u32]>,
{
    check_vocab(order, vocab_size)?;
    let mut counter = NgramCounter::new(order)?;
    for doc in corpus {
        counter.add_document(doc.as_ref(), vocab_size)?;
    }
    Ok(counter)
}

/// Counts `docs` split into `shards` contiguous runs of documents, in
/// parallel, then merges the partial counters in shard order.
pub fn count_ngrams_sharded<D>(
    docs: &[D],
    order: usize,
    vocab_size: u32,
    shards: usize,
) -> Result<NgramCounter, NgramError>
where
    D: AsRef<[u32]> + Sync,
{
    check_vocab(order, vocab_size)?;
    let shards = shards.max(1);
    let per = docs.len().div_ceil(shards).max(1);
    let partial: Vec<Result<NgramCounter, NgramError>> = docs
        .par_chunks(per)
        .enumerate()
        .map(|(i, chunk)| {
            let mut c = NgramCounter::new(order)?;
            for (j, d) in chunk.iter().enumerate() {
                check_tokens(d.as_ref(), vocab_size, (i * per + j) as u64)?;
                c.add_document_unchecked(d.as_ref());
            }
            Ok(c)
        })
        .collect();
    let mut merged = NgramCounter::new(order)?;
    for p in partial {
        merged = merge_counters(merged, p?)?;
    }
    Ok(merged)
}

/// Pointwise sum of two counters of the same order.
pub fn merge_counters(a: NgramCounter, b: NgramCounter) -> Result<NgramCounter, NgramError> {
    if a.order != b.order {
        return Err(NgramError::OrderMismatch {
            expected: a.order,
            got: b.order,
        });
    }
    let (mut big, small) = if a.counts.len() >= b.counts.len() {
        (a, b)
    } else {
        (b, a)
    };
    for (k, c) in small.counts {
        *big.counts.entry(k).or_insert(0) += c;
    }
    big.total_tokens_seen += small.total_tokens_seen;
    big.documents += small.documents;
    Ok(big)
}

/// Stored count of `gram`; 0 when unseen.
pub fn frequency(counter: &NgramCounter, gram: &Ngram) -> Result<u64, NgramError> {
    if gram.order() != counter.order {
        return Err(NgramError::OrderMismatch {
            expected: counter.order,
            got: gram.order(),
        });
    }
    Ok(counter.count_window(gram.tokens()))
}
