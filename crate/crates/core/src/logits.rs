//! Dense score vectors and log-space helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Raw, unnormalized scores over the vocabulary from one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
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

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Normalized log-probabilities: `logsumexp(values) == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProbVector(Vec<f64>);

impl LogProbVector {
    /// Wrap values that are already normalized. No check is performed.
    pub fn from_normalized(values: Vec<f64>) -> Self {
        Self(values)
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

    pub fn get(&self, token: TokenId) -> f64 {
        self.0[token.index()]
    }

    pub fn probs(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.exp()).collect()
    }

    /// Lowest index attaining the maximum.
    pub fn argmax(&self) -> Option<TokenId> {
        argmax(&self.0).map(TokenId::from)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<LogProbVector> for LogitVector {
    fn from(v: LogProbVector) -> Self {
        LogitVector(v.0)
    }
}

/// Lowest index of the maximum over finite entries.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// `log Σ exp(v)` with max-subtraction. Returns `-inf` for an empty slice or
/// one with no finite entries.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return if max == f64::INFINITY { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp(values);
    values.iter().map(|v| v - lse).collect()
}

pub fn to_log_probs(logits: &LogitVector) -> LogProbVector {
    LogProbVector(log_softmax(logits.values()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn symmetric_pair() {
        let lp = to_log_probs(&LogitVector::new(vec![0.0, 0.0]).unwrap());
        assert_abs_diff_eq!(lp.values()[0], 0.5_f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(lp.values()[1], 0.5_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn hand_evaluated_softmax() {
        let lp = to_log_probs(&LogitVector::new(vec![0.0, 3.0_f64.ln()]).unwrap());
        assert_abs_diff_eq!(lp.values()[0], 0.25_f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(lp.values()[1], 0.75_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            LogitVector::new(vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        );
        assert!(LogitVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let lp = to_log_probs(&LogitVector::new(vec![1000.0, 1000.0, -1000.0]).unwrap());
        assert_abs_diff_eq!(lp.values()[0], 0.5_f64.ln(), epsilon = 1e-12);
        assert!(lp.values()[2] < -1999.0);
    }

    #[test]
    fn large_vocab_sums_to_one() {
        let values: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 1000) as f64 / 37.0).collect();
        let lp = to_log_probs(&LogitVector::new(values).unwrap());
        let total: f64 = lp.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    proptest! {
        #[test]
        fn shift_invariance(
            values in proptest::collection::vec(-20.0f64..20.0, 2..50),
            shift in -100.0f64..100.0,
        ) {
            let a = to_log_probs(&LogitVector::new(values.clone()).unwrap());
            let shifted = values.iter().map(|v| v + shift).collect();
            let b = to_log_probs(&LogitVector::new(shifted).unwrap());
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalized(values in proptest::collection::vec(-50.0f64..50.0, 2..200)) {
            let lp = to_log_probs(&LogitVector::new(values).unwrap());
            prop_assert!(logsumexp(lp.values()).abs() < 1e-9);
            prop_assert!(lp.values().iter().all(|&v| v <= 1e-12));
        }
    }
}
