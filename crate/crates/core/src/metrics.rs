//! Evaluation metrics for generated text: n-gram diversity, rouge overlap,
//! Spearman rank correlation, and cosine coherence over supplied embeddings.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Counts of the `n`-token windows of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramMultiset<T: Eq + Hash> {
    pub n: usize,
    pub grams: HashMap<Vec<T>, usize>,
}

impl<T: Eq + Hash + Clone> NGramMultiset<T> {
    pub fn from_tokens(tokens: &[T], n: usize) -> Self {
        let mut grams = HashMap::new();
        if n > 0 {
            for w in tokens.windows(n) {
                *grams.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        Self { n, grams }
    }

    pub fn total(&self) -> usize {
        self.grams.values().sum()
    }

    pub fn unique(&self) -> usize {
        self.grams.len()
    }
}

/// Product over `n = 2..=4` of unique over total n-grams.
pub fn diversity<T: Eq + Hash + Clone>(tokens: &[T]) -> Result<f64> {
    if tokens.len() < 4 {
        return Err(Error::TooShort { needed: 4, got: tokens.len() });
    }
    Ok((2..=4)
        .map(|n| {
            let m = NGramMultiset::from_tokens(tokens, n);
            m.unique() as f64 / m.total() as f64
        })
        .product())
}

pub fn diversity_text(text: &str) -> Result<f64> {
    diversity(&rouge_tokens(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_overlap(overlap: usize, cand: usize, reference: usize) -> Self {
        let precision = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
        let recall = overlap as f64 / reference as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// Lowercased whitespace tokens.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Unigram overlap with counts clipped to the reference.
pub fn rouge1<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Result<RougeScore> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let mut ref_counts: HashMap<&T, usize> = HashMap::new();
    for t in reference {
        *ref_counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for t in candidate {
        if let Some(c) = ref_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    Ok(RougeScore::from_overlap(overlap, candidate.len(), reference.len()))
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Result<RougeScore> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(RougeScore::from_overlap(lcs_len(candidate, reference), candidate.len(), reference.len()))
}

pub fn rouge1_text(candidate: &str, reference: &str) -> Result<RougeScore> {
    rouge1(&rouge_tokens(candidate), &rouge_tokens(reference))
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> Result<RougeScore> {
    rouge_l(&rouge_tokens(candidate), &rouge_tokens(reference))
}

/// 1-based ranks, tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: x.len() });
    }
    if let Some(index) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: index % x.len() });
    }
    Ok(())
}

/// Pearson correlation of the average-rank vectors.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub exact: bool,
}

pub const EXACT_PERMUTATION_MAX_N: usize = 10;

/// Rho with a two-sided p-value: exact over all permutations of `y`'s ranks
/// for small samples, Student-t with `n - 2` degrees of freedom otherwise.
pub fn spearman_test(x: &[f64], y: &[f64]) -> Result<SpearmanTest> {
    let rho = spearman(x, y)?;
    let n = x.len();
    if n <= EXACT_PERMUTATION_MAX_N {
        let rx = average_ranks(x);
        let mut ry = average_ranks(y);
        let threshold = rho.abs() - 1e-12;
        let (mut hits, mut total) = (0u64, 0u64);
        permute(&mut ry, n, &mut |perm| {
            total += 1;
            // Permuting ranks keeps their variance, so this never fails.
            if pearson(&rx, perm).map(|r| r.abs() >= threshold).unwrap_or(false) {
                hits += 1;
            }
        });
        return Ok(SpearmanTest { rho, p_value: hits as f64 / total as f64, exact: true });
    }
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(SpearmanTest { rho, p_value, exact: false })
}

/// Heap's algorithm; visits all `k!` orderings of `v[..k]`.
fn permute(v: &mut [f64], k: usize, visit: &mut dyn FnMut(&[f64])) {
    if k <= 1 {
        visit(v);
        return;
    }
    for i in 0..k - 1 {
        permute(v, k - 1, visit);
        if k.is_multiple_of(2) {
            v.swap(i, k - 1);
        } else {
            v.swap(0, k - 1);
        }
    }
    permute(v, k - 1, visit);
}

/// Cosine similarity.
pub fn coherence(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if let Some(index) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: index % a.len().max(1) });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if a == b {
        return Ok(1.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Source of sentence embeddings keyed by record id.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, id: &str) -> Result<Vec<f64>>;
}

pub const EMBEDDING_FORMAT_HEADER: &str = "#costeer-embeddings\tv1";

/// Precomputed embeddings. The file starts with the format header and a
/// `dim\t<n>` line, then one `id\tv1 v2 ...` record per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingFile {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, vectors: HashMap::new() })
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.contains(['\t', '\n']) {
            return Err(Error::InvalidParameter(format!("bad embedding id {id:?}")));
        }
        if values.len() != self.dim {
            return Err(Error::LengthMismatch { left: values.len(), right: self.dim });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        self.vectors.insert(id, values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let parse = |line: usize, message: String| Error::Parse { line, message };
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(parse(0, format!("missing {what}"))),
            }
        };
        let (n, header) = next("header")?;
        if header.trim_end() != EMBEDDING_FORMAT_HEADER {
            return Err(parse(n, format!("expected {EMBEDDING_FORMAT_HEADER:?}")));
        }
        let (n, dim_line) = next("dimension line")?;
        let dim = dim_line
            .strip_prefix("dim\t")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .ok_or_else(|| parse(n, "expected dim\\t<n>".into()))?;
        let mut out = Self::new(dim).map_err(|e| parse(n, e.to_string()))?;
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, rest) = line.split_once('\t').ok_or_else(|| parse(i + 1, "expected id\\tvalues".into()))?;
            let values = rest
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse(i + 1, e.to_string()))?;
            out.insert(id, values).map_err(|e| parse(i + 1, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{EMBEDDING_FORMAT_HEADER}")?;
        writeln!(out, "dim\t{}", self.dim)?;
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        for id in ids {
            let v: Vec<String> = self.vectors[id].iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{id}\t{}", v.join(" "))?;
        }
        Ok(())
    }
}

impl EmbeddingProvider for EmbeddingFile {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, id: &str) -> Result<Vec<f64>> {
        self.vectors
            .get(id)
            .cloned()
            .ok_or_else(|| Error::InvalidParameter(format!("no embedding for id {id:?}")))
    }
}

pub fn coherence_by_id(provider: &dyn EmbeddingProvider, a: &str, b: &str) -> Result<f64> {
    coherence(&provider.embed(a)?, &provider.embed(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity(&w("a b c d e")).unwrap(), 1.0);
        assert_abs_diff_eq!(diversity(&w("a a a a a")).unwrap(), 1.0 / 24.0, epsilon = 1e-15);
        assert_eq!(diversity(&w("a b c")), Err(Error::TooShort { needed: 4, got: 3 }));
        let m = NGramMultiset::from_tokens(&w("a b a b"), 2);
        assert_eq!((m.total(), m.unique()), (3, 2));
        assert_eq!(NGramMultiset::from_tokens(&w("a b"), 3).total(), 0);
    }

    #[test]
    fn coherence_examples() {
        assert_eq!(coherence(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]).unwrap(), 1.0);
        assert_eq!(coherence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(coherence(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_eq!(coherence(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm));
    }

    #[test]
    fn rouge_examples() {
        let same = rouge1_text("The cat sat", "the cat sat").unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let none = rouge1_text("x y", "a b").unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        let s = rouge1_text("the cat sat", "the cat").unwrap();
        assert_abs_diff_eq!(s.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(s.recall, 1.0);
        assert_abs_diff_eq!(s.f1, 0.8, epsilon = 1e-12);
        // clipping: the reference has one "the"
        let c = rouge1_text("the the the", "the cat").unwrap();
        assert_abs_diff_eq!(c.precision, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(rouge1_text("a", ""), Err(Error::EmptyReference));
    }

    #[test]
    fn rouge_l_examples() {
        let same = rouge_l_text("a b c", "a b c").unwrap();
        assert_eq!(same.f1, 1.0);
        let s = rouge_l_text("a c b", "a b c").unwrap();
        assert_abs_diff_eq!(s.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.recall, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(rouge_l_text("a b", "c d").unwrap().f1, 0.0);
        assert_eq!(rouge_l_text("a", "  "), Err(Error::EmptyReference));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        assert_eq!(spearman(&x, &[9.0, 7.0, 5.0, 1.0, 0.0]).unwrap(), -1.0);
        // sum d^2 = 4 and 6
        assert_abs_diff_eq!(spearman(&x, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap(), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&x, &[1.0, 2.0, 5.0, 3.0, 4.0]).unwrap(), 0.7, epsilon = 1e-12);
        assert!(matches!(spearman(&x, &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert_eq!(spearman(&x, &[2.0; 5]), Err(Error::DegenerateVariance));
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn exact_p_values() {
        // n = 3: rho = 1 happens for one of six orderings, rho = -1 for one.
        let t = spearman_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(t.exact);
        assert_abs_diff_eq!(t.p_value, 2.0 / 6.0, epsilon = 1e-15);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = spearman_test(&x, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert_abs_diff_eq!(t.p_value, 16.0 / 120.0, epsilon = 1e-15);
        let t = spearman_test(&x, &[1.0, 2.0, 5.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(t.p_value, 28.0 / 120.0, epsilon = 1e-15);
    }

    #[test]
    fn large_sample_p_value() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = (0..30).map(|i| f64::from(i) + if i % 2 == 0 { 3.0 } else { -3.0 }).collect();
        let t = spearman_test(&x, &y).unwrap();
        assert!(!t.exact);
        assert!(t.rho > 0.9 && t.p_value < 1e-6);
    }

    #[test]
    fn embedding_file_round_trip() {
        let mut f = EmbeddingFile::new(3).unwrap();
        f.insert("x", vec![0.1, -2.5, 1e-17]).unwrap();
        f.insert("p", vec![1.0, 1.0, 0.0]).unwrap();
        assert!(f.insert("bad", vec![1.0]).is_err());
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = EmbeddingFile::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(coherence_by_id(&back, "x", "x").unwrap(), 1.0);
        let bad = "#costeer-embeddings\tv1\ndim\t2\nx\t1 2 3\n";
        assert!(matches!(EmbeddingFile::read_from(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    proptest! {
        #[test]
        fn diversity_in_unit_interval(tokens in prop::collection::vec(0u8..4, 4..40)) {
            let d = diversity(&tokens).unwrap();
            prop_assert!(d > 0.0 && d <= 1.0);
        }

        #[test]
        fn rouge_components_bounded(a in prop::collection::vec(0u8..5, 0..20), b in prop::collection::vec(0u8..5, 1..20)) {
            for s in [rouge1(&a, &b).unwrap(), rouge_l(&a, &b).unwrap()] {
                for v in [s.precision, s.recall, s.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn spearman_monotone_invariance(x in prop::collection::vec(-50.0f64..50.0, 3..25), y in prop::collection::vec(-50.0f64..50.0, 25)) {
            let y = &y[..x.len()];
            if let Ok(r) = spearman(&x, y) {
                let xt: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
                let yt: Vec<f64> = y.iter().map(|v| 3.0 * v - 7.0).collect();
                prop_assert!((spearman(&xt, &yt).unwrap() - r).abs() < 1e-12);
            }
        }

        #[test]
        fn coherence_scale_invariance(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4), s in 0.01f64..100.0) {
            if let Ok(c) = coherence(&a, &b) {
                let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
                prop_assert!((coherence(&scaled, &b).unwrap() - c).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&c));
            }
        }
    }
}
