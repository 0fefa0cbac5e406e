//! The autoregressive logit source consumed by steering and inference.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::logits::LogitVector;
use crate::vocab::{TokenId, Vocabulary};

/// A deterministic next-token scorer.
///
/// Implementations must be referentially transparent: equal prefixes give
/// equal vectors. Stochastic backends have to be seeded before they are
/// wrapped. Any internal cache must be synchronized, since callers issue
/// queries concurrently through a shared reference.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Maximum prefix length accepted, if bounded.
    fn context_window(&self) -> Option<usize> {
        None
    }

    /// Backend-specific forward pass. Callers should prefer
    /// [`LanguageModel::next_token_logits`], which validates the prefix.
    fn forward(&self, prefix: &[TokenId]) -> Result<LogitVector>;

    /// Human-readable identity reported by the health endpoint.
    fn describe(&self) -> String;

    fn next_token_logits(&self, prefix: &[TokenId]) -> Result<LogitVector> {
        if let Some(window) = self.context_window() {
            if prefix.len() > window {
                return Err(Error::ContextWindowExceeded { len: prefix.len(), window });
            }
        }
        self.vocab().check(prefix)?;
        let logits = self.forward(prefix)?;
        if logits.len() != self.vocab().len() {
            return Err(Error::LengthMismatch { left: logits.len(), right: self.vocab().len() });
        }
        Ok(logits)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Arc<M> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn context_window(&self) -> Option<usize> {
        (**self).context_window()
    }

    fn forward(&self, prefix: &[TokenId]) -> Result<LogitVector> {
        (**self).forward(prefix)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn context_window(&self) -> Option<usize> {
        (**self).context_window()
    }

    fn forward(&self, prefix: &[TokenId]) -> Result<LogitVector> {
        (**self).forward(prefix)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Wraps a model and caps its window.
#[derive(Debug, Clone)]
pub struct Windowed<M> {
    pub inner: M,
    pub window: usize,
}

impl<M: LanguageModel> LanguageModel for Windowed<M> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn context_window(&self) -> Option<usize> {
        Some(self.window)
    }

    fn forward(&self, prefix: &[TokenId]) -> Result<LogitVector> {
        self.inner.forward(prefix)
    }

    fn describe(&self) -> String {
        format!("{} (window {})", self.inner.describe(), self.window)
    }
}
