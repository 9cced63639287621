//! Instruments for measuring verbatim memorization in language model
//! generations: exact scoring and binning of continuations, n-gram corpus
//! statistics, decoding entropy and embedding geometry, a deterministic
//! trie backend for fixtures, and a per-token memorization predictor.
//!
//! ```
//! use memscope::scoring::{memorization_score, MemorizationBinning};
//!
//! let s = memorization_score(&[1, 2, 3, 4], &[1, 2, 3, 9]).unwrap();
//! assert_eq!(MemorizationBinning::tenths().bin_index(s), 7);
//! ```

pub mod dynamics;
pub mod ngram;
pub mod predictor;
pub mod report;
pub mod scoring;
pub mod toy;
pub mod trace;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/traces.md")]
    mod traces {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/ngrams.md")]
    mod ngrams {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/toy.md")]
    mod toy {}
    #[doc = include_str!("../../../book/src/predictor.md")]
    mod predictor {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
