//! Randomized toy constructions with known steering behaviour, used to
//! check that inference recovers the parameters that generated a text.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::reference::ngram::NGramTable;
use crate::reference::toy::ToyModel;
use crate::vocab::{TokenId, Vocabulary};

/// Two cue contexts over a line of graded tokens `g0 .. g{n-1}`.
///
/// Every history row of the default table is a discretized Gaussian over
/// grade index with its own center and width. The `hi` cue tilts each row by
/// `exp(+beta_hi * grade)` and the `lo` cue by `exp(-beta_lo * grade)`, so the
/// two contexts prefer disjoint ends of the line and the influence of either
/// is linear in grade. Steering at weight `mu` moves a row's mode by
/// `mu * beta * width^2` grades, which makes lambda identifiable from greedy
/// output.
#[derive(Debug, Clone)]
pub struct GradedConstruction {
    pub model: ToyModel,
    pub cue_hi: TokenId,
    pub cue_lo: TokenId,
    pub prompt: Vec<TokenId>,
    pub grades: usize,
}

pub const GRADE_COUNT: usize = 64;
const FIRST_GRADE: usize = 3;

impl GradedConstruction {
    pub fn grade_token(&self, grade: usize) -> TokenId {
        TokenId::from(FIRST_GRADE + grade)
    }

    pub fn grade_of(&self, token: TokenId) -> Option<usize> {
        token.index().checked_sub(FIRST_GRADE).filter(|g| *g < self.grades)
    }
}

fn gaussian_row(center: f64, width: f64, tilt: f64, grades: usize) -> Vec<f64> {
    let log_w: Vec<f64> = (0..grades)
        .map(|g| {
            let d = g as f64 - center;
            -d * d / (2.0 * width * width) + tilt * d
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn graded_two_context<R: Rng + ?Sized>(rng: &mut R) -> Result<GradedConstruction> {
    let grades = GRADE_COUNT;
    let mut surfaces = vec!["A".to_string(), "B".to_string(), "p".to_string()];
    surfaces.extend((0..grades).map(|g| format!("g{g}")));
    let vocab = Vocabulary::new(surfaces)?;
    let prompt = TokenId(2);

    // Smoothing far below the smallest weight keeps every row an exact
    // discretized Gaussian over the whole grade line.
    let k = 1e-200;
    let mut base = NGramTable::empty(vocab.clone(), 2, k)?;
    let mut hi = NGramTable::empty(vocab.clone(), 2, k)?;
    let mut lo = NGramTable::empty(vocab.clone(), 2, k)?;
    let beta_hi = rng.random_range(0.9..1.2);
    let beta_lo = rng.random_range(0.9..1.2);

    let mut histories: Vec<Vec<TokenId>> = vec![vec![], vec![prompt]];
    histories.extend((0..grades).map(|g| vec![TokenId::from(FIRST_GRADE + g)]));
    for history in histories {
        let center = rng.random_range(30.0..33.0);
        let width = rng.random_range(3.0_f64..4.5).sqrt();
        for (table, tilt) in [(&mut base, 0.0), (&mut hi, beta_hi), (&mut lo, -beta_lo)] {
            for (g, w) in gaussian_row(center, width, tilt, grades).into_iter().enumerate() {
                table.add_count(&history, TokenId::from(FIRST_GRADE + g), w)?;
            }
        }
    }
    let model = ToyModel::new(base).with_cue(TokenId(0), hi)?.with_cue(TokenId(1), lo)?;
    Ok(GradedConstruction { model, cue_hi: TokenId(0), cue_lo: TokenId(1), prompt: vec![prompt], grades })
}

/// Two cue contexts whose tables put almost all mass on disjoint halves of a
/// shuffled word list, over a default table that spreads mass across both.
#[derive(Debug, Clone)]
pub struct DisjointConstruction {
    pub model: ToyModel,
    pub cue_a: TokenId,
    pub cue_b: TokenId,
    pub prompt: Vec<TokenId>,
    pub words_a: Vec<TokenId>,
    pub words_b: Vec<TokenId>,
}

pub fn disjoint_two_context<R: Rng + ?Sized>(rng: &mut R) -> Result<DisjointConstruction> {
    let half = rng.random_range(3..=6usize);
    let mut surfaces = vec!["A".to_string(), "B".to_string(), "p".to_string()];
    surfaces.extend((0..2 * half).map(|i| format!("w{i}")));
    let vocab = Vocabulary::new(surfaces)?;
    let prompt = TokenId(2);
    let mut words: Vec<TokenId> = (0..2 * half).map(|i| TokenId::from(FIRST_GRADE + i)).collect();
    words.shuffle(rng);
    let (words_a, words_b) = (words[..half].to_vec(), words[half..].to_vec());

    let k = 1e-3;
    let mut base = NGramTable::empty(vocab.clone(), 2, k)?;
    let mut a = NGramTable::empty(vocab.clone(), 2, k)?;
    let mut b = NGramTable::empty(vocab.clone(), 2, k)?;
    let mut histories: Vec<Vec<TokenId>> = vec![vec![], vec![prompt]];
    histories.extend(words.iter().map(|w| vec![*w]));
    for history in histories {
        for w in &words {
            base.add_count(&history, *w, rng.random_range(1.0..2.0))?;
        }
        for (table, set) in [(&mut a, &words_a), (&mut b, &words_b)] {
            for w in set {
                table.add_count(&history, *w, rng.random_range(1.0..2.0))?;
            }
        }
    }
    let model = ToyModel::new(base).with_cue(TokenId(0), a)?.with_cue(TokenId(1), b)?;
    Ok(DisjointConstruction { model, cue_a: TokenId(0), cue_b: TokenId(1), prompt: vec![prompt], words_a, words_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logits::{argmax, to_log_probs};
    use crate::model::LanguageModel;
    use crate::steering::combine::contextual_influence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn influence_is_linear_in_grade() {
        let c = graded_two_context(&mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let base = c.model.next_token_logits(&c.prompt).unwrap();
        let ctx = c.model.next_token_logits(&[c.cue_hi, c.prompt[0]]).unwrap();
        let f = contextual_influence(&ctx, &base).unwrap();
        let slope = f.values()[4] - f.values()[3];
        assert!(slope > 0.8);
        for g in 4..c.grades {
            let d = f.values()[FIRST_GRADE + g] - f.values()[FIRST_GRADE + g - 1];
            assert!((d - slope).abs() < 1e-9, "grade {g}: {d} vs {slope}");
        }
    }

    #[test]
    fn cues_prefer_opposite_ends() {
        let c = graded_two_context(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mode = |prefix: &[TokenId]| {
            let lp = to_log_probs(&c.model.next_token_logits(prefix).unwrap());
            c.grade_of(TokenId::from(argmax(lp.values()).unwrap())).unwrap()
        };
        let neutral = mode(&c.prompt);
        assert!(mode(&[c.cue_hi, c.prompt[0]]) > neutral);
        assert!(mode(&[c.cue_lo, c.prompt[0]]) < neutral);
    }

    #[test]
    fn disjoint_cues_concentrate_on_their_half() {
        let c = disjoint_two_context(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let probs = to_log_probs(&c.model.next_token_logits(&[c.cue_a, c.prompt[0]]).unwrap()).probs();
        let mass: f64 = c.words_a.iter().map(|w| probs[w.index()]).sum();
        assert!(mass > 0.99, "{mass}");
    }
}
