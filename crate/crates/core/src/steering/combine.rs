//! Contextual influence and the weighted logit combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{to_log_probs, LogProbVector, LogitVector};
use crate::model::LanguageModel;
use crate::steering::spec::SteeringSpec;
use crate::vocab::TokenId;

/// Per-token logit difference between a context-conditioned pass and the
/// context-free pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InfluenceVector(Vec<f64>);

impl InfluenceVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

fn finite_result(values: Vec<f64>) -> Result<LogitVector> {
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResult { index });
    }
    LogitVector::new(values)
}

pub fn contextual_influence(with_ctx: &LogitVector, without_ctx: &LogitVector) -> Result<InfluenceVector> {
    same_len(with_ctx.len(), without_ctx.len())?;
    Ok(InfluenceVector(
        with_ctx.values().iter().zip(without_ctx.values()).map(|(c, b)| c - b).collect(),
    ))
}

/// `base + sum_i mu_i * influence_i`.
pub fn combine_logits(base: &LogitVector, influences: &[(f64, &InfluenceVector)]) -> Result<LogitVector> {
    let mut out = base.values().to_vec();
    for (mu, inf) in influences {
        same_len(base.len(), inf.len())?;
        for (o, f) in out.iter_mut().zip(inf.values()) {
            *o += mu * f;
        }
    }
    finite_result(out)
}

/// The same combination written directly over pass outputs:
/// `(1 - sum_i mu_i) * base + sum_i mu_i * ctx_i`.
///
/// This form is exact at the identities: a single context at `mu = 1`
/// returns the context pass bit for bit, and `mu = 0` returns the base pass.
pub fn combine_passes(base: &LogitVector, contexts: &[(f64, &LogitVector)]) -> Result<LogitVector> {
    let base_weight = 1.0 - contexts.iter().map(|(mu, _)| mu).sum::<f64>();
    let mut out: Vec<f64> = base.values().iter().map(|b| base_weight * b).collect();
    for (mu, ctx) in contexts {
        same_len(base.len(), ctx.len())?;
        for (o, c) in out.iter_mut().zip(ctx.values()) {
            *o += mu * c;
        }
    }
    finite_result(out)
}

/// Outputs of every forward pass needed for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPasses {
    pub base: LogitVector,
    pub contexts: Vec<LogitVector>,
}

impl StepPasses {
    pub fn combine(&self, weights: &[f64]) -> Result<LogitVector> {
        same_len(weights.len(), self.contexts.len())?;
        let pairs: Vec<(f64, &LogitVector)> = weights.iter().copied().zip(&self.contexts).collect();
        combine_passes(&self.base, &pairs)
    }

    pub fn influences(&self) -> Result<Vec<InfluenceVector>> {
        self.contexts.iter().map(|c| contextual_influence(c, &self.base)).collect()
    }
}

/// One base pass on `prompt ++ generated` and one pass per context on the
/// context placed into the prompt, all conditioned on the same prefix.
pub fn run_passes(model: &dyn LanguageModel, spec: &SteeringSpec, generated: &[TokenId]) -> Result<StepPasses> {
    let base = model.next_token_logits(&spec.base_input(generated))?;
    let contexts = (0..spec.contexts().len())
        .map(|i| model.next_token_logits(&spec.context_input(i, generated)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StepPasses { base, contexts })
}

pub fn cos_next_distribution(
    model: &dyn LanguageModel,
    spec: &SteeringSpec,
    generated: &[TokenId],
) -> Result<LogProbVector> {
    let passes = run_passes(model, spec, generated)?;
    Ok(to_log_probs(&passes.combine(&spec.weights())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn influence_examples() {
        let a = lv(&[1.0, 2.0, 3.0]);
        let b = lv(&[0.0, 2.0, 1.0]);
        assert_eq!(contextual_influence(&a, &b).unwrap().values(), &[1.0, 0.0, 2.0]);
        assert!(contextual_influence(&a, &a).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(matches!(
            contextual_influence(&a, &lv(&[1.0])),
            Err(Error::LengthMismatch { left: 3, right: 1 })
        ));
    }

    #[test]
    fn combine_examples() {
        let base = lv(&[0.0, 0.0, 0.0]);
        assert_eq!(combine_logits(&base, &[]).unwrap(), base);
        let inf = contextual_influence(&lv(&[1.0, -1.0, 0.0]), &base).unwrap();
        assert_eq!(combine_logits(&base, &[(2.0, &inf)]).unwrap().values(), &[2.0, -2.0, 0.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let base = lv(&[0.0, 1e308]);
        let inf = InfluenceVector(vec![0.0, 1e308]);
        assert!(matches!(
            combine_logits(&base, &[(10.0, &inf)]),
            Err(Error::NonFiniteResult { index: 1 })
        ));
    }

    #[test]
    fn lambda_two_hand_evaluation() {
        // (1 + 2) [1,2,3] - 2 [0,2,1] = [3, 2, 7]
        let ctx = lv(&[1.0, 2.0, 3.0]);
        let base = lv(&[0.0, 2.0, 1.0]);
        let combined = combine_passes(&base, &[(3.0, &ctx)]).unwrap();
        assert_eq!(combined.values(), &[3.0, 2.0, 7.0]);
        let p = to_log_probs(&combined).probs();
        assert_abs_diff_eq!(p[0], 0.017_867_981_870_304_5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.006_573_263_185_309_1, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.975_558_754_944_386_4, epsilon = 1e-12);
    }

    #[test]
    fn identities_are_bit_exact() {
        let ctx = lv(&[0.1, -2.7, 3.3]);
        let base = lv(&[1.9, 0.2, -0.4]);
        assert_eq!(combine_passes(&base, &[(1.0, &ctx)]).unwrap(), ctx);
        assert_eq!(combine_passes(&base, &[(0.0, &ctx)]).unwrap(), base);
    }

    proptest! {
        #[test]
        fn two_forms_agree(
            base in proptest::collection::vec(-10.0f64..10.0, 4),
            c1 in proptest::collection::vec(-10.0f64..10.0, 4),
            c2 in proptest::collection::vec(-10.0f64..10.0, 4),
            mu1 in -5.0f64..5.0,
            mu2 in -5.0f64..5.0,
        ) {
            let (base, c1, c2) = (lv(&base), lv(&c1), lv(&c2));
            let i1 = contextual_influence(&c1, &base).unwrap();
            let i2 = contextual_influence(&c2, &base).unwrap();
            let a = combine_logits(&base, &[(mu1, &i1), (mu2, &i2)]).unwrap();
            let b = combine_passes(&base, &[(mu1, &c1), (mu2, &c2)]).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn antisymmetric(a in proptest::collection::vec(-10.0f64..10.0, 5), b in proptest::collection::vec(-10.0f64..10.0, 5)) {
            let ab = contextual_influence(&lv(&a), &lv(&b)).unwrap();
            let ba = contextual_influence(&lv(&b), &lv(&a)).unwrap();
            for (x, y) in ab.values().iter().zip(ba.values()) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
