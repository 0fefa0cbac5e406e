//! Bayesian inversion of the steered model: likelihoods of observed text,
//! posteriors over a finite lambda grid or a finite set of candidate
//! contexts, and continuation scoring.
//!
//! Normalizers are finite sums over the candidate set with a uniform prior.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{logsumexp, to_log_probs};
use crate::model::LanguageModel;
use crate::steering::combine::{cos_next_distribution, run_passes, StepPasses};
use crate::steering::spec::{ContextPlacement, ContextTarget, SteeringSpec};
use crate::vocab::TokenId;

/// Lambda used for context classification when none is given.
pub const DEFAULT_CLASSIFY_LAMBDA: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaGrid(Vec<f64>);

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidRange("lambda grid is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRange("lambda grid has non-finite values".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidRange("lambda grid must be strictly increasing".into()));
        }
        Ok(Self(values))
    }

    /// `n` evenly spaced points from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::InvalidRange("linspace needs at least one point".into())),
            1 if lo == hi => Self::new(vec![lo]),
            1 => Err(Error::InvalidRange("one point needs lo == hi".into())),
            _ => {
                let step = (hi - lo) / (n - 1) as f64;
                Self::new((0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect())
            }
        }
    }

    /// `lo, lo + step, ...` up to and including `hi` (within rounding).
    pub fn range(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidRange(format!("step must be positive, got {step}")));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::InvalidRange(format!("need finite lo <= hi, got [{lo}, {hi}]")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Self::new((0..n).map(|i| lo + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn step(&self) -> Option<f64> {
        (self.0.len() > 1).then(|| self.0[1] - self.0[0])
    }
}

impl Default for LambdaGrid {
    /// 17 points over `[-1, 3]`.
    fn default() -> Self {
        Self::linspace(-1.0, 3.0, 17).expect("static grid is valid")
    }
}

impl TryFrom<Vec<f64>> for LambdaGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LambdaGrid> for Vec<f64> {
    fn from(g: LambdaGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEntry<C> {
    pub candidate: C,
    pub log_likelihood: f64,
    pub posterior: f64,
}

/// Normalized mass over a finite candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult<C> {
    pub support: Vec<PosteriorEntry<C>>,
    pub map_index: usize,
}

impl<C> PosteriorResult<C> {
    /// Softmax of the log-likelihoods. Non-finite entries get zero mass; the
    /// maximizer is the first index attaining the largest log-likelihood.
    pub fn from_log_likelihoods(candidates: Vec<C>, log_likelihoods: Vec<f64>) -> Result<Self> {
        if candidates.len() != log_likelihoods.len() {
            return Err(Error::LengthMismatch { left: candidates.len(), right: log_likelihoods.len() });
        }
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let finite: Vec<f64> = log_likelihoods.iter().map(|&l| if l.is_finite() { l } else { f64::NEG_INFINITY }).collect();
        let lse = logsumexp(&finite);
        if !lse.is_finite() {
            return Err(Error::AllLikelihoodsDegenerate);
        }
        let mut map_index = 0;
        for (i, &l) in finite.iter().enumerate() {
            if l > finite[map_index] {
                map_index = i;
            }
        }
        let support = candidates
            .into_iter()
            .zip(log_likelihoods)
            .zip(&finite)
            .map(|((candidate, log_likelihood), &f)| PosteriorEntry {
                candidate,
                log_likelihood,
                posterior: (f - lse).exp(),
            })
            .collect();
        Ok(Self { support, map_index })
    }

    pub fn map_entry(&self) -> &PosteriorEntry<C> {
        &self.support[self.map_index]
    }

    pub fn posteriors(&self) -> Vec<f64> {
        self.support.iter().map(|e| e.posterior).collect()
    }

    /// Indices ordered by descending posterior; ties keep candidate order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.support.len()).collect();
        idx.sort_by(|&a, &b| self.support[b].posterior.total_cmp(&self.support[a].posterior).then(a.cmp(&b)));
        idx
    }
}

pub fn map_lambda(post: &PosteriorResult<f64>) -> f64 {
    post.map_entry().candidate
}

/// `sum_i log p(x_i | x_<i)` under the steered distribution.
pub fn sequence_loglik(model: &dyn LanguageModel, spec: &SteeringSpec, x: &[TokenId]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptySequence);
    }
    model.vocab().check(x)?;
    let mut total = 0.0;
    for i in 0..x.len() {
        total += cos_next_distribution(model, spec, &x[..i])?.get(x[i]);
    }
    Ok(total)
}

/// Forward passes along an observed sequence. They do not depend on the
/// steering weights, so one evaluation serves a whole grid.
#[derive(Debug, Clone)]
pub struct ObservedPasses {
    steps: Vec<StepPasses>,
    observed: Vec<TokenId>,
}

impl ObservedPasses {
    pub fn collect(model: &dyn LanguageModel, spec: &SteeringSpec, x: &[TokenId]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptySequence);
        }
        model.vocab().check(x)?;
        let steps = (0..x.len()).map(|i| run_passes(model, spec, &x[..i])).collect::<Result<Vec<_>>>()?;
        Ok(Self { steps, observed: x.to_vec() })
    }

    pub fn loglik(&self, weights: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (step, &t) in self.steps.iter().zip(&self.observed) {
            total += to_log_probs(&step.combine(weights)?).get(t);
        }
        Ok(total)
    }
}

/// Log-likelihood that degrades to `-inf` when the combination overflows.
fn grid_point(passes: &ObservedPasses, weights: &[f64]) -> Result<f64> {
    match passes.loglik(weights) {
        Err(Error::NonFiniteResult { .. }) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

/// Posterior over `grid` for a context (or contrast pair) and prompt.
pub fn lambda_posterior(
    model: &dyn LanguageModel,
    target: &ContextTarget,
    prompt: &[TokenId],
    x: &[TokenId],
    grid: &LambdaGrid,
) -> Result<PosteriorResult<f64>> {
    lambda_posterior_placed(model, target, prompt, ContextPlacement::Prepend, x, grid)
}

pub fn lambda_posterior_placed(
    model: &dyn LanguageModel,
    target: &ContextTarget,
    prompt: &[TokenId],
    placement: ContextPlacement,
    x: &[TokenId],
    grid: &LambdaGrid,
) -> Result<PosteriorResult<f64>> {
    let spec = SteeringSpec::from_target(target, prompt.to_vec(), 0.0)?.with_placement(placement)?;
    let passes = ObservedPasses::collect(model, &spec, x)?;
    let logliks = grid
        .values()
        .iter()
        .map(|&lambda| grid_point(&passes, &spec.with_lambda(lambda)?.weights()))
        .collect::<Result<Vec<_>>>()?;
    PosteriorResult::from_log_likelihoods(grid.values().to_vec(), logliks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextCandidate {
    pub label: String,
    pub target: ContextTarget,
}

/// Posterior over candidate contexts at a fixed lambda.
pub fn classify_context(
    model: &dyn LanguageModel,
    candidates: &[ContextCandidate],
    prompt: &[TokenId],
    x: &[TokenId],
    lambda: f64,
) -> Result<PosteriorResult<String>> {
    classify_context_placed(model, candidates, prompt, ContextPlacement::Prepend, x, lambda)
}

pub fn classify_context_placed(
    model: &dyn LanguageModel,
    candidates: &[ContextCandidate],
    prompt: &[TokenId],
    placement: ContextPlacement,
    x: &[TokenId],
    lambda: f64,
) -> Result<PosteriorResult<String>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = candidates.iter().find(|c| !seen.insert(c.label.as_str())) {
        return Err(Error::DuplicateLabel(dup.label.clone()));
    }
    let logliks = candidates
        .iter()
        .map(|c| {
            let spec = SteeringSpec::from_target(&c.target, prompt.to_vec(), lambda)?.with_placement(placement)?;
            let passes = ObservedPasses::collect(model, &spec, x)?;
            grid_point(&passes, &spec.weights())
        })
        .collect::<Result<Vec<_>>>()?;
    PosteriorResult::from_log_likelihoods(candidates.iter().map(|c| c.label.clone()).collect(), logliks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub total: f64,
    /// Per-token mean.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationScores {
    pub scores: Vec<ContinuationScore>,
    /// Highest total score; first index on ties.
    pub best: usize,
}

pub fn score_continuations(
    model: &dyn LanguageModel,
    spec: &SteeringSpec,
    candidates: &[Vec<TokenId>],
) -> Result<ContinuationScores> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if let Some(i) = candidates.iter().position(|c| c.is_empty()) {
        return Err(Error::EmptyCandidate(i));
    }
    let scores = candidates
        .iter()
        .map(|c| {
            let total = sequence_loglik(model, spec, c)?;
            Ok(ContinuationScore { total, mean: total / c.len() as f64 })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.total > scores[best].total {
            best = i;
        }
    }
    Ok(ContinuationScores { scores, best })
}

/// Min-max rescaling to `[0, 1]`.
pub fn normalize_map_scores(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::InvalidParameter("need at least two values".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::DegenerateRange);
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}
