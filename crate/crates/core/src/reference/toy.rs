//! The toy backend: one default n-gram table plus optional tables selected by
//! cue tokens, and its flat-file serialization.
//!
//! A plain n-gram forgets a context as soon as it slides out of the history
//! window. Cue tables keep the context visible for the whole continuation:
//! the last cue token found anywhere in the prefix selects the table, and
//! cue tokens are dropped from the history the table sees. With no cues the
//! model is exactly its default n-gram table.
//!
//! File layout (tab separated, one `history token count` triple per line):
//!
//! ```text
//! #costeer-toy    v1
//! order    2
//! smoothing_k    0.5
//! vocab    a    b    A
//! fallback    a            (optional)
//! table    *                (default table)
//!     a    2                (empty history)
//! a    b    2
//! table    A                (table used while cue A is in the prefix)
//! a    a    3
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::logits::LogitVector;
use crate::model::LanguageModel;
use crate::reference::ngram::NGramTable;
use crate::vocab::{TokenId, Vocabulary};

pub const TOY_FORMAT_HEADER: &str = "#costeer-toy\tv1";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    base: NGramTable,
    cues: Vec<(TokenId, NGramTable)>,
}

impl ToyModel {
    pub fn new(base: NGramTable) -> Self {
        Self { base, cues: Vec::new() }
    }

    /// Register `table` as the distribution used while `cue` is present. All
    /// tables must share the vocabulary of the default table.
    pub fn with_cue(mut self, cue: TokenId, table: NGramTable) -> Result<Self> {
        if table.vocab() != self.base.vocab() {
            return Err(Error::InvalidParameter("cue table vocabulary differs".into()));
        }
        self.base.vocab().check(&[cue])?;
        if self.cues.iter().any(|(c, _)| *c == cue) {
            return Err(Error::InvalidParameter(format!("cue {cue} registered twice")));
        }
        self.cues.push((cue, table));
        Ok(self)
    }

    pub fn base(&self) -> &NGramTable {
        &self.base
    }

    pub fn cues(&self) -> impl Iterator<Item = (TokenId, &NGramTable)> {
        self.cues.iter().map(|(c, t)| (*c, t))
    }

    fn is_cue(&self, t: TokenId) -> bool {
        self.cues.iter().any(|(c, _)| *c == t)
    }

    fn table_for(&self, prefix: &[TokenId]) -> &NGramTable {
        prefix
            .iter()
            .rev()
            .find_map(|t| self.cues.iter().find(|(c, _)| c == t).map(|(_, table)| table))
            .unwrap_or(&self.base)
    }

    pub fn log_conditional(&self, prefix: &[TokenId]) -> LogitVector {
        if self.cues.is_empty() {
            return self.base.log_conditional(prefix);
        }
        let history: Vec<TokenId> = prefix.iter().copied().filter(|&t| !self.is_cue(t)).collect();
        self.table_for(prefix).log_conditional(&history)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let vocab = self.base.vocab();
        writeln!(out, "{TOY_FORMAT_HEADER}")?;
        writeln!(out, "order\t{}", self.base.order())?;
        writeln!(out, "smoothing_k\t{:?}", self.base.smoothing_k())?;
        writeln!(out, "vocab\t{}", vocab.tokens().join("\t"))?;
        if let Some(fb) = vocab.fallback() {
            writeln!(out, "fallback\t{}", vocab.surface(fb)?)?;
        }
        write_table(&mut out, "*", &self.base)?;
        for (cue, table) in &self.cues {
            write_table(&mut out, vocab.surface(*cue)?, table)?;
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("surfaces are valid UTF-8")
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse { line: line + 1, message };

        match lines.next() {
            Some((_, Ok(l))) if l.trim_end() == TOY_FORMAT_HEADER => {}
            Some((i, Ok(l))) => return Err(parse_err(i, format!("bad header {l:?}"))),
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(parse_err(0, "empty file".into())),
        }

        let mut order = None;
        let mut k = None;
        let mut vocab: Option<Vocabulary> = None;
        let mut fallback = None;
        let mut tables: Vec<(String, NGramTable)> = Vec::new();
        let mut by_name: HashMap<String, usize> = HashMap::new();

        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "order" if tables.is_empty() => {
                    order = Some(field(&fields, 1, i)?.parse::<usize>().map_err(|e| parse_err(i, e.to_string()))?)
                }
                "smoothing_k" if tables.is_empty() => {
                    k = Some(field(&fields, 1, i)?.parse::<f64>().map_err(|e| parse_err(i, e.to_string()))?)
                }
                "vocab" if tables.is_empty() => {
                    vocab = Some(Vocabulary::new(fields[1..].iter().copied())?);
                }
                "fallback" if tables.is_empty() => fallback = Some(field(&fields, 1, i)?.to_string()),
                "table" => {
                    let name = field(&fields, 1, i)?.to_string();
                    let mut v = vocab.clone().ok_or_else(|| parse_err(i, "table before vocab".into()))?;
                    if let Some(fb) = &fallback {
                        v = v.with_fallback(fb)?;
                        vocab = Some(v.clone());
                    }
                    let o = order.ok_or_else(|| parse_err(i, "table before order".into()))?;
                    let kk = k.ok_or_else(|| parse_err(i, "table before smoothing_k".into()))?;
                    if by_name.insert(name.clone(), tables.len()).is_some() {
                        return Err(parse_err(i, format!("table {name:?} declared twice")));
                    }
                    tables.push((name, NGramTable::empty(v, o, kk)?));
                }
                _ => {
                    let (_, table) = tables
                        .last_mut()
                        .ok_or_else(|| parse_err(i, format!("unexpected line {line:?}")))?;
                    if fields.len() != 3 {
                        return Err(parse_err(i, format!("expected 3 fields, got {}", fields.len())));
                    }
                    let v = table.vocab().clone();
                    let lookup = |s: &str| v.id(s).ok_or_else(|| parse_err(i, format!("unknown token {s:?}")));
                    let history = fields[0]
                        .split(' ')
                        .filter(|s| !s.is_empty())
                        .map(lookup)
                        .collect::<Result<Vec<_>>>()?;
                    let token = lookup(fields[1])?;
                    let count: f64 = fields[2].parse().map_err(|e: std::num::ParseFloatError| parse_err(i, e.to_string()))?;
                    table.add_count(&history, token, count).map_err(|e| parse_err(i, e.to_string()))?;
                }
            }
        }

        let base_idx = *by_name
            .get("*")
            .ok_or_else(|| Error::Parse { line: 0, message: "missing default table `*`".into() })?;
        let base = tables[base_idx].1.clone();
        let mut model = ToyModel::new(base);
        for (name, table) in tables.into_iter().filter(|(n, _)| n != "*") {
            let cue = model
                .base
                .vocab()
                .id(&name)
                .ok_or_else(|| Error::Parse { line: 0, message: format!("cue {name:?} not in vocab") })?;
            model = model.with_cue(cue, table)?;
        }
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn field<'a>(fields: &[&'a str], idx: usize, line: usize) -> Result<&'a str> {
    fields
        .get(idx)
        .copied()
        .ok_or(Error::Parse { line: line + 1, message: "missing field".into() })
}

fn write_table<W: Write>(out: &mut W, name: &str, table: &NGramTable) -> Result<()> {
    let vocab = table.vocab();
    writeln!(out, "table\t{name}")?;
    let mut rows: Vec<_> = table.rows().collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    for (history, counts) in rows {
        let h = vocab.detokenize(history)?;
        for (t, &c) in counts.iter().enumerate() {
            if c != 0.0 {
                writeln!(out, "{h}\t{}\t{c:?}", vocab.surface(TokenId::from(t))?)?;
            }
        }
    }
    Ok(())
}

impl From<NGramTable> for ToyModel {
    fn from(t: NGramTable) -> Self {
        ToyModel::new(t)
    }
}

impl LanguageModel for ToyModel {
    fn vocab(&self) -> &Vocabulary {
        self.base.vocab()
    }

    fn forward(&self, prefix: &[TokenId]) -> Result<LogitVector> {
        Ok(self.log_conditional(prefix))
    }

    fn describe(&self) -> String {
        format!("toy:{} cues={}", self.base.describe(), self.cues.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::ngram::build_ngram_model;
    use crate::vocab::{Role, TokenSequence};

    fn fixture() -> ToyModel {
        let v = Vocabulary::new(["a", "b", "A", "B"]).unwrap();
        let corpus = |lines: &[&str]| -> Vec<TokenSequence> {
            lines.iter().map(|l| v.tokenize(l, Role::Prompt).unwrap()).collect()
        };
        let base = build_ngram_model(&corpus(&["a b a b"]), &v, 2, 0.5).unwrap();
        let a = build_ngram_model(&corpus(&["a a a a"]), &v, 2, 0.5).unwrap();
        let b = build_ngram_model(&corpus(&["b b b b"]), &v, 2, 0.5).unwrap();
        ToyModel::new(base).with_cue(TokenId(2), a).unwrap().with_cue(TokenId(3), b).unwrap()
    }

    #[test]
    fn cue_persists_through_prefix() {
        let m = fixture();
        let with_cue = m.log_conditional(&[TokenId(2), TokenId(1), TokenId(0), TokenId(0)]);
        let expected = m.cues().next().unwrap().1.log_conditional(&[TokenId(0)]);
        assert_eq!(with_cue, expected);
        // last cue wins
        let both = m.log_conditional(&[TokenId(2), TokenId(3), TokenId(0)]);
        assert_eq!(both, m.cues().nth(1).unwrap().1.log_conditional(&[TokenId(0)]));
        assert_eq!(m.log_conditional(&[TokenId(0)]), m.base().log_conditional(&[TokenId(0)]));
    }

    #[test]
    fn file_round_trip() {
        let m = fixture();
        let text = m.to_file_string();
        let back = ToyModel::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_file_string(), text);
    }

    #[test]
    fn fractional_counts_round_trip_exactly() {
        let v = Vocabulary::new(["x", "y"]).unwrap();
        let mut t = NGramTable::empty(v, 2, 1e-200).unwrap();
        t.add_count(&[], TokenId(0), 1.0 / 3.0).unwrap();
        t.add_count(&[TokenId(0)], TokenId(1), (-240.0_f64).exp()).unwrap();
        let m = ToyModel::new(t);
        assert_eq!(ToyModel::read_from(m.to_file_string().as_bytes()).unwrap(), m);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "#costeer-toy\tv1\norder\t2\nsmoothing_k\t0.5\nvocab\ta\tb\ntable\t*\na\tz\t1\n";
        match ToyModel::read_from(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        assert!(ToyModel::read_from("nope\n".as_bytes()).is_err());
    }
}
