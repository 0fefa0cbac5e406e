//! Token ids, vocabularies and the whitespace word-level tokenizer used by
//! the toy backends.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Context,
    Prompt,
    Generated,
}

/// Ordered token ids tagged with the part of the input they came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub role: Role,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, role: Role) -> Self {
        Self { tokens, role }
    }

    pub fn empty(role: Role) -> Self {
        Self::new(Vec::new(), role)
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    fallback: Option<TokenId>,
}

impl Vocabulary {
    /// Surface strings must be unique, non-empty and free of whitespace; at
    /// least two are required.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::InvalidVocabulary(format!(
                "need at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!(
                    "token {t:?} is empty or contains whitespace"
                )));
            }
            if index.insert(t.clone(), TokenId::from(i)).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index, fallback: None })
    }

    /// Configure the unit substituted for out-of-vocabulary words.
    pub fn with_fallback(mut self, surface: &str) -> Result<Self> {
        let id = self
            .id(surface)
            .ok_or_else(|| Error::UnknownToken(surface.to_string()))?;
        self.fallback = Some(id);
        Ok(self)
    }

    pub fn fallback(&self) -> Option<TokenId> {
        self.fallback
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id.index())
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange { id: id.index(), size: self.len() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|t| t.index() >= self.len()) {
            Some(bad) => Err(Error::TokenOutOfRange { id: bad.index(), size: self.len() }),
            None => Ok(()),
        }
    }

    pub fn tokenize(&self, text: &str, role: Role) -> Result<TokenSequence> {
        let tokens = text
            .split_whitespace()
            .map(|unit| match self.id(unit) {
                Some(id) => Ok(id),
                None => self.fallback.ok_or_else(|| Error::UnknownToken(unit.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenSequence::new(tokens, role))
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| self.surface(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

/// Whitespace-split `text` against `vocab`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    vocab.tokenize(text, Role::Prompt)
}

pub fn detokenize(tokens: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    vocab.detokenize(tokens)
}

/// Collapse runs of whitespace to single spaces and trim.
pub fn canonical_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
