use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// What a candidate context is: a single context, or a contrast pair whose
/// logit difference defines the steering direction.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextTarget {
    Single(Vec<TokenId>),
    Pair { positive: Vec<TokenId>, negative: Vec<TokenId> },
}

/// How user-facing coefficients map onto engine weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "convention")]
pub enum Convention {
    /// One context (or one contrast pair) steered by lambda, with engine
    /// weight `mu = 1 + lambda`.
    SingleLambda { lambda: f64 },
    /// Free per-context weights.
    MultiMu,
}

/// Where context tokens go relative to the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPlacement {
    #[default]
    Prepend,
    /// Insert the context before prompt position `n` (`n == prompt.len()`
    /// appends it).
    Insert(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedContext {
    pub tokens: Vec<TokenId>,
    pub mu: f64,
}

/// A prompt plus weighted contexts. The engine always works in the
/// multi-context form `base + sum_i mu_i (ctx_i - base)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSpec {
    prompt: Vec<TokenId>,
    contexts: Vec<WeightedContext>,
    convention: Convention,
    placement: ContextPlacement,
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidSpec(format!("{name} must be finite, got {v}")))
    }
}

impl SteeringSpec {
    pub fn single(context: Vec<TokenId>, prompt: Vec<TokenId>, lambda: f64) -> Result<Self> {
        let lambda = finite("lambda", lambda)?;
        Ok(Self {
            prompt,
            contexts: vec![WeightedContext { tokens: context, mu: 1.0 + lambda }],
            convention: Convention::SingleLambda { lambda },
            placement: ContextPlacement::Prepend,
        })
    }

    /// `[(positive, +mu), (negative, -mu)]` with `mu = 1 + lambda`.
    pub fn contrast(
        positive: Vec<TokenId>,
        negative: Vec<TokenId>,
        prompt: Vec<TokenId>,
        lambda: f64,
    ) -> Result<Self> {
        let lambda = finite("lambda", lambda)?;
        let mu = 1.0 + lambda;
        Ok(Self {
            prompt,
            contexts: vec![
                WeightedContext { tokens: positive, mu },
                WeightedContext { tokens: negative, mu: -mu },
            ],
            convention: Convention::SingleLambda { lambda },
            placement: ContextPlacement::Prepend,
        })
    }

    pub fn from_target(target: &ContextTarget, prompt: Vec<TokenId>, lambda: f64) -> Result<Self> {
        match target {
            ContextTarget::Single(c) => Self::single(c.clone(), prompt, lambda),
            ContextTarget::Pair { positive, negative } => {
                Self::contrast(positive.clone(), negative.clone(), prompt, lambda)
            }
        }
    }

    pub fn multi(prompt: Vec<TokenId>, contexts: Vec<(Vec<TokenId>, f64)>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::InvalidSpec("multi-context spec needs at least one context".into()));
        }
        let contexts = contexts
            .into_iter()
            .map(|(tokens, mu)| Ok(WeightedContext { tokens, mu: finite("mu", mu)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { prompt, contexts, convention: Convention::MultiMu, placement: ContextPlacement::Prepend })
    }

    pub fn with_placement(mut self, placement: ContextPlacement) -> Result<Self> {
        if let ContextPlacement::Insert(at) = placement {
            if at > self.prompt.len() {
                return Err(Error::InvalidSpec(format!(
                    "insertion index {at} beyond prompt of {} tokens",
                    self.prompt.len()
                )));
            }
        }
        self.placement = placement;
        Ok(self)
    }

    /// Same contexts and prompt with a different lambda. Only meaningful for
    /// the single-lambda convention.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if self.convention == Convention::MultiMu {
            return Err(Error::InvalidSpec("with_lambda on a multi-context spec".into()));
        }
        let lambda = finite("lambda", lambda)?;
        let mut out = self.clone();
        let mu = 1.0 + lambda;
        out.contexts[0].mu = mu;
        if let Some(neg) = out.contexts.get_mut(1) {
            neg.mu = -mu;
        }
        out.convention = Convention::SingleLambda { lambda };
        Ok(out)
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn contexts(&self) -> &[WeightedContext] {
        &self.contexts
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn placement(&self) -> ContextPlacement {
        self.placement
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.convention {
            Convention::SingleLambda { lambda } => Some(lambda),
            Convention::MultiMu => None,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.contexts.iter().map(|c| c.mu).collect()
    }

    /// Input of the context-free pass: `prompt ++ generated`.
    pub fn base_input(&self, generated: &[TokenId]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.prompt.len() + generated.len());
        out.extend_from_slice(&self.prompt);
        out.extend_from_slice(generated);
        out
    }

    /// Input of the pass for context `i`: the context placed into the prompt,
    /// followed by the same generated prefix the base pass sees.
    pub fn context_input(&self, i: usize, generated: &[TokenId]) -> Vec<TokenId> {
        let ctx = &self.contexts[i].tokens;
        let at = match self.placement {
            ContextPlacement::Prepend => 0,
            ContextPlacement::Insert(at) => at,
        };
        let mut out = Vec::with_capacity(ctx.len() + self.prompt.len() + generated.len());
        out.extend_from_slice(&self.prompt[..at]);
        out.extend_from_slice(ctx);
        out.extend_from_slice(&self.prompt[at..]);
        out.extend_from_slice(generated);
        out
    }
}
