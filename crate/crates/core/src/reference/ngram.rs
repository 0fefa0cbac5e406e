//! Add-k smoothed n-gram tables.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::logits::LogitVector;
use crate::model::LanguageModel;
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

/// Counts keyed by history, where a history is the last `min(len, order - 1)`
/// tokens of a prefix. Prefixes shorter than `order - 1` use their full
/// length, so sequence starts get their own rows.
///
/// `P(t | h) = (count(h, t) + k) / (count(h, .) + k |V|)`
#[derive(Debug, Clone, PartialEq)]
pub struct NGramTable {
    order: usize,
    smoothing_k: f64,
    vocab: Vocabulary,
    counts: HashMap<Vec<TokenId>, Vec<f64>>,
}

impl NGramTable {
    pub fn empty(vocab: Vocabulary, order: usize, smoothing_k: f64) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidParameter("n-gram order must be at least 1".into()));
        }
        if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smoothing_k must be positive and finite, got {smoothing_k}"
            )));
        }
        Ok(Self { order, smoothing_k, vocab, counts: HashMap::new() })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Iterate `(history, per-token counts)` rows in unspecified order.
    pub fn rows(&self) -> impl Iterator<Item = (&[TokenId], &[f64])> {
        self.counts.iter().map(|(h, c)| (h.as_slice(), c.as_slice()))
    }

    /// Add `count` (which may be fractional) to `(history, token)`.
    pub fn add_count(&mut self, history: &[TokenId], token: TokenId, count: f64) -> Result<()> {
        if history.len() >= self.order {
            return Err(Error::InvalidParameter(format!(
                "history of {} tokens is too long for order {}",
                history.len(),
                self.order
            )));
        }
        if !(count >= 0.0 && count.is_finite()) {
            return Err(Error::InvalidParameter(format!("count must be finite and >= 0, got {count}")));
        }
        self.vocab.check(history)?;
        self.vocab.check(&[token])?;
        let v = self.vocab.len();
        let row = self.counts.entry(history.to_vec()).or_insert_with(|| vec![0.0; v]);
        row[token.index()] += count;
        Ok(())
    }

    /// Count every position of every sequence against its truncated history.
    pub fn count_corpus<'a, I>(&mut self, corpus: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        for seq in corpus {
            for i in 0..seq.len() {
                let start = (i + 1).saturating_sub(self.order);
                self.add_count(&seq[start..i], seq[i], 1.0)?;
            }
        }
        Ok(())
    }

    pub fn history<'p>(&self, prefix: &'p [TokenId]) -> &'p [TokenId] {
        let keep = prefix.len().min(self.order - 1);
        &prefix[prefix.len() - keep..]
    }

    /// Smoothed conditional distribution for the history of `prefix`.
    pub fn conditional(&self, prefix: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len() as f64;
        let k = self.smoothing_k;
        match self.counts.get(self.history(prefix)) {
            Some(row) => {
                let total: f64 = row.iter().sum();
                let denom = total + k * v;
                row.iter().map(|c| (c + k) / denom).collect()
            }
            None => vec![1.0 / v; self.vocab.len()],
        }
    }

    /// Log of the smoothed conditionals; already normalized.
    pub fn log_conditional(&self, prefix: &[TokenId]) -> LogitVector {
        let v = self.vocab.len() as f64;
        let k = self.smoothing_k;
        let values = match self.counts.get(self.history(prefix)) {
            Some(row) => {
                let total: f64 = row.iter().sum();
                let log_denom = (total + k * v).ln();
                row.iter().map(|c| (c + k).ln() - log_denom).collect()
            }
            None => vec![-v.ln(); self.vocab.len()],
        };
        LogitVector::new(values).expect("smoothed conditionals are strictly positive")
    }
}

/// Build an n-gram table by counting `corpus`.
pub fn build_ngram_model(
    corpus: &[TokenSequence],
    vocab: &Vocabulary,
    order: usize,
    smoothing_k: f64,
) -> Result<NGramTable> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut table = NGramTable::empty(vocab.clone(), order, smoothing_k)?;
    table.count_corpus(corpus.iter().map(|s| &s.tokens[..]))?;
    Ok(table)
}

/// Logits of the toy model after `prefix`.
pub fn toy_next_logits(table: &NGramTable, prefix: &[TokenId]) -> LogitVector {
    table.log_conditional(prefix)
}

impl LanguageModel for NGramTable {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, prefix: &[TokenId]) -> Result<LogitVector> {
        Ok(self.log_conditional(prefix))
    }

    fn describe(&self) -> String {
        format!("ngram(order={}, k={}, |V|={})", self.order, self.smoothing_k, self.vocab.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Role;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn seqs(vocab: &Vocabulary, lines: &[&str]) -> Vec<TokenSequence> {
        lines.iter().map(|l| vocab.tokenize(l, Role::Prompt).unwrap()).collect()
    }

    fn ab() -> Vocabulary {
        Vocabulary::new(["a", "b"]).unwrap()
    }

    #[test]
    fn hand_counted_bigram() {
        let v = ab();
        let t = build_ngram_model(&seqs(&v, &["a b", "a b"]), &v, 2, 1.0).unwrap();
        let p = t.conditional(&[TokenId(0)]);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        let logits = toy_next_logits(&t, &[TokenId(0)]);
        assert_abs_diff_eq!(logits.values()[0], 0.25_f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(logits.values()[1], 0.75_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn unseen_history_is_uniform() {
        let v = Vocabulary::new(["a", "b", "c"]).unwrap();
        let t = build_ngram_model(&seqs(&v, &["a b"]), &v, 2, 0.5).unwrap();
        for p in t.conditional(&[TokenId(2)]) {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn large_k_approaches_uniform() {
        let v = ab();
        let t = build_ngram_model(&seqs(&v, &["a b b b b", "a b"]), &v, 2, 1e6).unwrap();
        for p in t.conditional(&[TokenId(1)]) {
            assert!((p - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn unigram_empty_prefix_is_smoothed_frequency() {
        let v = ab();
        let t = build_ngram_model(&seqs(&v, &["a a a b"]), &v, 1, 0.5).unwrap();
        let l = toy_next_logits(&t, &[]);
        assert_abs_diff_eq!(l.values()[0], (3.5_f64 / 5.0).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(l.values()[1], (1.5_f64 / 5.0).ln(), epsilon = 1e-15);
        // order 1 ignores every prefix
        assert_eq!(l, toy_next_logits(&t, &[TokenId(1), TokenId(1)]));
    }

    #[test]
    fn markov_property() {
        let v = Vocabulary::new(["a", "b", "c"]).unwrap();
        let t = build_ngram_model(&seqs(&v, &["a b c a b c", "c b a"]), &v, 3, 0.5).unwrap();
        let x = [TokenId(2), TokenId(0), TokenId(1)];
        let y = [TokenId(1), TokenId(1), TokenId(0), TokenId(1)];
        assert_eq!(toy_next_logits(&t, &x), toy_next_logits(&t, &y));
    }

    #[test]
    fn errors() {
        let v = ab();
        assert_eq!(build_ngram_model(&[], &v, 2, 0.5), Err(Error::EmptyCorpus));
        assert_eq!(build_ngram_model(&seqs(&v, &[""]), &v, 2, 0.5), Err(Error::EmptyCorpus));
        assert!(build_ngram_model(&seqs(&v, &["a"]), &v, 0, 0.5).is_err());
        assert!(build_ngram_model(&seqs(&v, &["a"]), &v, 2, 0.0).is_err());
    }

    #[test]
    fn bigram_argmax_follows_counts() {
        let v = ab();
        let t = build_ngram_model(&seqs(&v, &["a b a b"]), &v, 2, 0.5).unwrap();
        let logits = t.next_token_logits(&[TokenId(0)]).unwrap();
        assert_eq!(crate::logits::argmax(logits.values()), Some(1));
    }

    proptest! {
        #[test]
        fn conditionals_positive_and_normalized(
            lines in proptest::collection::vec(proptest::collection::vec(0u32..4, 0..8), 1..6),
            prefix in proptest::collection::vec(0u32..4, 0..5),
            order in 1usize..4,
            k in 0.01f64..3.0,
        ) {
            let v = Vocabulary::new(["a", "b", "c", "d"]).unwrap();
            let corpus: Vec<TokenSequence> = lines
                .iter()
                .map(|l| TokenSequence::new(l.iter().map(|&i| TokenId(i)).collect(), Role::Prompt))
                .collect();
            prop_assume!(corpus.iter().any(|s| !s.is_empty()));
            let t = build_ngram_model(&corpus, &v, order, k).unwrap();
            let prefix: Vec<TokenId> = prefix.into_iter().map(TokenId).collect();
            let p = t.conditional(&prefix);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // determinism
            prop_assert_eq!(t.clone(), build_ngram_model(&corpus, &v, order, k).unwrap());
        }
    }
}
