//! Deterministic reference models and brute-force oracles.

pub mod constructions;
pub mod enumerate;
pub mod ngram;
pub mod toy;

pub use enumerate::{enumerate_sequence_probs, SequenceProbMap, DEFAULT_ENUMERATION_BUDGET};
pub use ngram::{build_ngram_model, toy_next_logits, NGramTable};
pub use toy::ToyModel;
