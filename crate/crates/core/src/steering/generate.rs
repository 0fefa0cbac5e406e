//! The steered decoding loop.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::logits::{to_log_probs, LogitVector};
use crate::model::LanguageModel;
use crate::steering::combine::{run_passes, InfluenceVector};
use crate::steering::sampler::{sample_token, SamplerConfig};
use crate::steering::spec::SteeringSpec;
use crate::steering::stability::{stability_check_with, StabilityBounds, StabilityWarning};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub context_logits: Vec<LogitVector>,
    pub base_logits: LogitVector,
    pub influences: Vec<InfluenceVector>,
    pub combined: LogitVector,
    pub token: TokenId,
    /// Probability of `token` under the steered distribution, before any
    /// sampler temperature.
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepRecord>,
    pub warnings: BTreeSet<StabilityWarning>,
    pub stopped: bool,
}

impl GenerationTrace {
    pub fn mean_logprob(&self) -> Option<f64> {
        if self.steps.is_empty() {
            return None;
        }
        Some(self.steps.iter().map(|s| s.prob.ln()).sum::<f64>() / self.steps.len() as f64)
    }

    /// Generated tokens without a trailing stop token.
    pub fn content_tokens(&self) -> &[TokenId] {
        if self.stopped {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions<'a> {
    pub stop: Option<&'a [TokenId]>,
    pub bounds: StabilityBounds,
}

pub fn generate(
    model: &dyn LanguageModel,
    spec: &SteeringSpec,
    sampler: &SamplerConfig,
    max_tokens: usize,
    stop: Option<&[TokenId]>,
) -> Result<GenerationTrace> {
    generate_with(model, spec, sampler, max_tokens, &GenerateOptions { stop, ..Default::default() })
}

/// Every step runs the base pass and one pass per context on the same
/// generated prefix, combines them, and samples from the result.
pub fn generate_with(
    model: &dyn LanguageModel,
    spec: &SteeringSpec,
    sampler: &SamplerConfig,
    max_tokens: usize,
    options: &GenerateOptions<'_>,
) -> Result<GenerationTrace> {
    if max_tokens == 0 {
        return Err(Error::InvalidParameter("max_tokens must be at least 1".into()));
    }
    sampler.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let weights = spec.weights();
    let mut trace = GenerationTrace {
        tokens: Vec::with_capacity(max_tokens),
        steps: Vec::with_capacity(max_tokens),
        warnings: BTreeSet::new(),
        stopped: false,
    };
    for _ in 0..max_tokens {
        let passes = run_passes(model, spec, &trace.tokens)?;
        let combined = passes.combine(&weights)?;
        trace.warnings.extend(stability_check_with(spec, &combined, &options.bounds));
        let dist = to_log_probs(&combined);
        let token = sample_token(&dist, sampler, &mut rng)?;
        let influences = passes.influences()?;
        trace.steps.push(StepRecord {
            prob: dist.get(token).exp(),
            context_logits: passes.contexts,
            base_logits: passes.base,
            influences,
            combined,
            token,
        });
        trace.tokens.push(token);
        if options.stop.is_some_and(|s| s.contains(&token)) {
            trace.stopped = true;
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logits::argmax;
    use crate::reference::ngram::build_ngram_model;
    use crate::steering::combine::combine_logits;
    use crate::steering::sampler::Strategy;
    use crate::vocab::{Role, TokenSequence, Vocabulary};

    fn model() -> crate::reference::ngram::NGramTable {
        let v = Vocabulary::new(["a", "b", "c", "x", "."]).unwrap();
        let corpus: Vec<TokenSequence> = ["x a b c a b", "a c c b a .", "c b a x a a", "b b c ."]
            .iter()
            .map(|l| v.tokenize(l, Role::Prompt).unwrap())
            .collect();
        build_ngram_model(&corpus, &v, 3, 0.5).unwrap()
    }

    fn plain_greedy(model: &dyn LanguageModel, prefix: &[TokenId], n: usize) -> Vec<TokenId> {
        let mut p = prefix.to_vec();
        let mut out = Vec::new();
        for _ in 0..n {
            let l = model.next_token_logits(&p).unwrap();
            let t = TokenId::from(argmax(l.values()).unwrap());
            out.push(t);
            p.push(t);
        }
        out
    }

    #[test]
    fn lambda_zero_reproduces_context_conditioned_greedy() {
        let m = model();
        let spec = SteeringSpec::single(vec![TokenId(3)], vec![TokenId(0)], 0.0).unwrap();
        let trace = generate(&m, &spec, &SamplerConfig::greedy(), 8, None).unwrap();
        assert_eq!(trace.tokens, plain_greedy(&m, &[TokenId(3), TokenId(0)], 8));
    }

    #[test]
    fn single_token_is_first_argmax() {
        let m = model();
        let spec = SteeringSpec::single(vec![TokenId(3)], vec![TokenId(2)], 2.0).unwrap();
        let trace = generate(&m, &spec, &SamplerConfig::greedy(), 1, None).unwrap();
        assert_eq!(trace.tokens.len(), 1);
        assert_eq!(Some(trace.tokens[0].index()), argmax(trace.steps[0].combined.values()));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let m = model();
        let spec = SteeringSpec::single(vec![TokenId(3)], vec![TokenId(1)], 1.5).unwrap();
        let cfg = SamplerConfig::new(Strategy::Temperature { temperature: 0.6 }, 1234).unwrap();
        let a = generate(&m, &spec, &cfg, 20, None).unwrap();
        let b = generate(&m, &spec, &cfg, 20, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stops_on_stop_token() {
        let m = model();
        let spec = SteeringSpec::single(vec![TokenId(3)], vec![TokenId(1)], 0.0).unwrap();
        let cfg = SamplerConfig::new(Strategy::Temperature { temperature: 1.0 }, 5).unwrap();
        let stop = [TokenId(4)];
        let trace = generate(&m, &spec, &cfg, 200, Some(&stop)).unwrap();
        assert!(trace.stopped);
        assert_eq!(*trace.tokens.last().unwrap(), TokenId(4));
        assert_eq!(trace.content_tokens().len() + 1, trace.tokens.len());
        assert_eq!(trace.steps.len(), trace.tokens.len());
    }

    #[test]
    fn trace_records_reproduce_combination() {
        let m = model();
        let spec = SteeringSpec::multi(
            vec![TokenId(0)],
            vec![(vec![TokenId(3)], 1.7), (vec![TokenId(2), TokenId(2)], -0.4)],
        )
        .unwrap();
        let trace = generate(&m, &spec, &SamplerConfig::default(), 12, None).unwrap();
        for step in &trace.steps {
            let pairs: Vec<_> = spec.weights().into_iter().zip(step.influences.iter()).collect();
            let again = combine_logits(&step.base_logits, &pairs).unwrap();
            for (x, y) in again.values().iter().zip(step.combined.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_zero_length() {
        let m = model();
        let spec = SteeringSpec::single(vec![], vec![], 0.0).unwrap();
        assert!(generate(&m, &spec, &SamplerConfig::greedy(), 0, None).is_err());
    }

    #[test]
    fn extreme_lambda_warns_but_runs() {
        let m = model();
        let spec = SteeringSpec::single(vec![TokenId(3)], vec![TokenId(0)], 6.0).unwrap();
        let trace = generate(&m, &spec, &SamplerConfig::greedy(), 4, None).unwrap();
        assert_eq!(trace.tokens.len(), 4);
        assert!(trace.warnings.contains(&StabilityWarning::LambdaOutOfRecommendedRange));
    }
}
