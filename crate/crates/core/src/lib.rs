//! Context steering for autoregressive decoders.
//!
//! A steered step combines one context-free forward pass with one pass per
//! context, `base + sum_i mu_i (ctx_i - base)`, where a single context at
//! strength `lambda` uses `mu = 1 + lambda`. The same forward model is
//! inverted by [`inference`] to recover lambda or the most likely context
//! behind an observed text.

pub mod error;
pub mod inference;
pub mod jobs;
pub mod logits;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod remote;
pub mod steering;
pub mod vocab;

pub use error::{Error, Result};
pub use logits::{logsumexp, to_log_probs, LogProbVector, LogitVector};
pub use model::LanguageModel;
pub use vocab::{detokenize, tokenize, Role, TokenId, TokenSequence, Vocabulary};
