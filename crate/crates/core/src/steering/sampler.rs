//! Token selection from a steered distribution.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{argmax, log_softmax, LogProbVector};
use crate::vocab::TokenId;

pub const DEFAULT_TEMPERATURE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum Strategy {
    Greedy,
    Temperature { temperature: f64 },
    TopK { k: usize, temperature: f64 },
    TopP { p: f64, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(flatten)]
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { strategy: Strategy::Temperature { temperature: DEFAULT_TEMPERATURE }, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self { strategy: Strategy::Greedy, seed: 0 }
    }

    pub fn new(strategy: Strategy, seed: u64) -> Result<Self> {
        let cfg = Self { strategy, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let temp_ok = |t: f64| t > 0.0 && t.is_finite();
        match self.strategy {
            Strategy::Greedy => Ok(()),
            Strategy::Temperature { temperature } if !temp_ok(temperature) => {
                bad(format!("temperature must be positive, got {temperature}"))
            }
            Strategy::TopK { k, temperature } if k == 0 || !temp_ok(temperature) => {
                bad(format!("top_k needs k >= 1 and positive temperature, got k={k}, T={temperature}"))
            }
            Strategy::TopP { p, temperature } if !(p > 0.0 && p <= 1.0) || !temp_ok(temperature) => {
                bad(format!("top_p needs p in (0, 1] and positive temperature, got p={p}, T={temperature}"))
            }
            _ => Ok(()),
        }
    }
}

fn degenerate(values: &[f64]) -> bool {
    !values.iter().any(|v| v.is_finite())
}

/// Indices kept by the strategy, ordered by descending probability with
/// lower indices first on ties.
fn ranked(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

pub fn sample_token<R: Rng + ?Sized>(dist: &LogProbVector, sampler: &SamplerConfig, rng: &mut R) -> Result<TokenId> {
    if degenerate(dist.values()) {
        return Err(Error::DegenerateDistribution);
    }
    let (temperature, support) = match sampler.strategy {
        Strategy::Greedy => {
            return argmax(dist.values()).map(TokenId::from).ok_or(Error::DegenerateDistribution);
        }
        Strategy::Temperature { temperature } => (temperature, None),
        Strategy::TopK { k, temperature } => (temperature, Some(Support::TopK(k))),
        Strategy::TopP { p, temperature } => (temperature, Some(Support::TopP(p))),
    };
    let scaled: Vec<f64> = dist.values().iter().map(|v| v / temperature).collect();
    let scaled = log_softmax(&scaled);
    let keep: Vec<usize> = match support {
        None => (0..scaled.len()).filter(|&i| scaled[i].is_finite()).collect(),
        Some(Support::TopK(k)) => ranked(&scaled).into_iter().take(k).collect(),
        Some(Support::TopP(p)) => {
            let mut kept = Vec::new();
            let mut mass = 0.0;
            for i in ranked(&scaled) {
                kept.push(i);
                mass += scaled[i].exp();
                if mass >= p {
                    break;
                }
            }
            kept
        }
    };
    if keep.len() == 1 {
        return Ok(TokenId::from(keep[0]));
    }
    let restricted: Vec<f64> = keep.iter().map(|&i| scaled[i]).collect();
    let weights: Vec<f64> = log_softmax(&restricted).iter().map(|v| v.exp()).collect();
    let index = WeightedIndex::new(&weights).map_err(|_| Error::DegenerateDistribution)?;
    Ok(TokenId::from(keep[index.sample(rng)]))
}

enum Support {
    TopK(usize),
    TopP(f64),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logits::{to_log_probs, LogitVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> LogProbVector {
        LogProbVector::from_normalized(p.iter().map(|v| v.ln()).collect())
    }

    #[test]
    fn greedy_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = dist(&[0.2, 0.5, 0.3]);
        assert_eq!(sample_token(&d, &SamplerConfig::greedy(), &mut rng).unwrap(), TokenId(1));
        let tied = dist(&[0.4, 0.4, 0.2]);
        assert_eq!(sample_token(&tied, &SamplerConfig::greedy(), &mut rng).unwrap(), TokenId(0));
    }

    #[test]
    fn top_one_is_greedy() {
        let d = to_log_probs(&LogitVector::new(vec![0.3, 1.2, 1.1, -4.0]).unwrap());
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = SamplerConfig::new(Strategy::TopK { k: 1, temperature: 1.7 }, seed).unwrap();
            assert_eq!(sample_token(&d, &cfg, &mut rng).unwrap(), TokenId(1));
        }
    }

    #[test]
    fn tiny_top_p_is_greedy() {
        let d = dist(&[0.1, 0.6, 0.3]);
        let cfg = SamplerConfig::new(Strategy::TopP { p: 0.05, temperature: 1.0 }, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(sample_token(&d, &cfg, &mut rng).unwrap(), TokenId(1));
        }
    }

    #[test]
    fn top_p_support() {
        // sorted: 0.6, 0.3, 0.1 -> p = 0.85 keeps the first two
        let d = dist(&[0.1, 0.6, 0.3]);
        let cfg = SamplerConfig::new(Strategy::TopP { p: 0.85, temperature: 1.0 }, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            assert_ne!(sample_token(&d, &cfg, &mut rng).unwrap(), TokenId(0));
        }
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let p = [0.2, 0.5, 0.3];
        let d = dist(&p);
        let cfg = SamplerConfig::new(Strategy::Temperature { temperature: 1.0 }, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_token(&d, &cfg, &mut rng).unwrap().index()] += 1;
        }
        for (c, pi) in counts.iter().zip(p) {
            let sigma = (n as f64 * pi * (1.0 - pi)).sqrt();
            assert!((*c as f64 - n as f64 * pi).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn low_temperature_sharpens() {
        let d = dist(&[0.45, 0.55]);
        let cfg = SamplerConfig::new(Strategy::Temperature { temperature: 0.01 }, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hits = (0..1000).filter(|_| sample_token(&d, &cfg, &mut rng).unwrap() == TokenId(1)).count();
        assert!(hits > 995);
    }

    #[test]
    fn validation_and_degenerate() {
        assert!(SamplerConfig::new(Strategy::Temperature { temperature: 0.0 }, 0).is_err());
        assert!(SamplerConfig::new(Strategy::TopK { k: 0, temperature: 1.0 }, 0).is_err());
        assert!(SamplerConfig::new(Strategy::TopP { p: 1.5, temperature: 1.0 }, 0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = LogProbVector::from_normalized(vec![f64::NEG_INFINITY; 3]);
        assert_eq!(
            sample_token(&bad, &SamplerConfig::default(), &mut rng),
            Err(Error::DegenerateDistribution)
        );
    }
}
