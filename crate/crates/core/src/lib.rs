//! Multi-candidate cascaded speech translation, algorithmic core.
//!
//! `no_std` + `alloc`. Everything here is pure computation:
//!
//! - [`align`]: n-best alignment by longest common subsequence with `unk` padding.
//! - [`model`]: a small pre-norm Transformer encoder-decoder that averages the
//!   per-candidate decoder states once before the final layer norm, with an
//!   optional speech-unit cross-attention, trained through [`graph`]'s
//!   reverse-mode differentiation.
//! - [`decode`]: beam search over the candidate-pooled distribution.
//! - [`units`]: k-means quantization of frame features and run-length dedup.
//! - [`speechsim`]: toy parallel corpora and a homophone/elision ASR simulator.
//! - [`eval`]: lexical overlap, BLEU, WER and best-candidate analysis.
//!
//! File formats, configuration and the command line live in the `mcst` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod align;
pub mod decode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod rng;
pub mod speechsim;
pub mod tensor;
pub mod text;
pub mod train;
pub mod units;

pub use error::{Error, Result};
pub use rng::{seeded_rng, SeededRng};
pub use tensor::Mat;
pub use text::{CandidateSet, TokenId, VocabKind, Vocabulary};
