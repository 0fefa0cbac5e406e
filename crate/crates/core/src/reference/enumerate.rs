//! Brute-force enumeration of every fixed-length sequence under a per-step
//! decoding rule.

use crate::error::{Error, Result};
use crate::logits::LogProbVector;
use crate::vocab::TokenId;

pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1_000_000;

/// Probabilities of all `|V|^L` sequences, stored in lexicographic order of
/// token ids.
#[derive(Debug, Clone)]
pub struct SequenceProbMap {
    vocab_size: usize,
    length: usize,
    probs: Vec<f64>,
}

impl SequenceProbMap {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn length(&self) -> usize {
        self.length
    }

    fn index_of(&self, seq: &[TokenId]) -> Option<usize> {
        if seq.len() != self.length {
            return None;
        }
        seq.iter().try_fold(0usize, |acc, t| {
            (t.index() < self.vocab_size).then(|| acc * self.vocab_size + t.index())
        })
    }

    pub fn get(&self, seq: &[TokenId]) -> Option<f64> {
        self.index_of(seq).map(|i| self.probs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<TokenId>, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(mut idx, &p)| {
            let mut seq = vec![TokenId(0); self.length];
            for slot in seq.iter_mut().rev() {
                *slot = TokenId::from(idx % self.vocab_size);
                idx /= self.vocab_size;
            }
            (seq, p)
        })
    }
}

/// Enumerate every length-`length` sequence, multiplying the per-step
/// probabilities returned by `decoder` for each prefix.
pub fn enumerate_sequence_probs<F>(
    mut decoder: F,
    length: usize,
    vocab_size: usize,
    budget: u128,
) -> Result<SequenceProbMap>
where
    F: FnMut(&[TokenId]) -> Result<LogProbVector>,
{
    let needed = (vocab_size as u128)
        .checked_pow(length as u32)
        .unwrap_or(u128::MAX);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let mut probs = Vec::with_capacity(needed as usize);
    let mut prefix = Vec::with_capacity(length);
    walk(&mut decoder, &mut prefix, 1.0, length, vocab_size, &mut probs)?;
    Ok(SequenceProbMap { vocab_size, length, probs })
}

fn walk<F>(
    decoder: &mut F,
    prefix: &mut Vec<TokenId>,
    mass: f64,
    length: usize,
    vocab_size: usize,
    out: &mut Vec<f64>,
) -> Result<()>
where
    F: FnMut(&[TokenId]) -> Result<LogProbVector>,
{
    if prefix.len() == length {
        out.push(mass);
        return Ok(());
    }
    let step = decoder(prefix)?;
    if step.len() != vocab_size {
        return Err(Error::LengthMismatch { left: step.len(), right: vocab_size });
    }
    for (t, lp) in step.values().iter().enumerate() {
        prefix.push(TokenId::from(t));
        walk(decoder, prefix, mass * lp.exp(), length, vocab_size, out)?;
        prefix.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logits::{to_log_probs, LogitVector};

    fn wobbly(prefix: &[TokenId]) -> Result<LogProbVector> {
        let s: f64 = prefix.iter().map(|t| t.index() as f64 + 0.3).sum();
        let logits = LogitVector::new(vec![s.sin(), (2.0 * s).cos(), 0.5 * s])?;
        Ok(to_log_probs(&logits))
    }

    #[test]
    fn sums_to_one() {
        let map = enumerate_sequence_probs(wobbly, 4, 3, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(map.len(), 81);
        assert!((map.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn length_one_is_first_step() {
        let map = enumerate_sequence_probs(wobbly, 1, 3, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let first = wobbly(&[]).unwrap().probs();
        for (seq, p) in map.iter() {
            assert_eq!(p, first[seq[0].index()]);
        }
    }

    #[test]
    fn lookup_matches_iteration_order() {
        let map = enumerate_sequence_probs(wobbly, 3, 3, DEFAULT_ENUMERATION_BUDGET).unwrap();
        for (seq, p) in map.iter() {
            assert_eq!(map.get(&seq), Some(p));
        }
        assert_eq!(map.get(&[TokenId(0)]), None);
        assert_eq!(map.get(&[TokenId(0), TokenId(0), TokenId(7)]), None);
    }

    #[test]
    fn budget() {
        let err = enumerate_sequence_probs(wobbly, 13, 3, DEFAULT_ENUMERATION_BUDGET).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { needed: 1_594_323, .. }));
    }
}
