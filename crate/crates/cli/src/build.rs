//! Building toy table files from line corpora.

use std::path::{Path, PathBuf};

use costeer_core::reference::{build_ngram_model, ToyModel};
use costeer_core::{Role, TokenSequence, Vocabulary};

#[derive(Debug, Clone)]
pub struct CueSpec {
    pub surface: String,
    pub corpus: PathBuf,
}

impl std::str::FromStr for CueSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (surface, path) = s.split_once('=').ok_or_else(|| format!("expected CUE=FILE, got {s:?}"))?;
        if surface.is_empty() || surface.contains(char::is_whitespace) {
            return Err(format!("bad cue token {surface:?}"));
        }
        Ok(Self { surface: surface.to_string(), corpus: PathBuf::from(path) })
    }
}

fn read_corpus(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// Vocabulary in first-appearance order over the base corpus, then the cue
/// corpora, then the cue tokens and the fallback.
pub fn build(
    corpus: &Path,
    cues: &[CueSpec],
    order: usize,
    k: f64,
    fallback: Option<&str>,
) -> Result<ToyModel, String> {
    let base_lines = read_corpus(corpus)?;
    let cue_lines = cues.iter().map(|c| read_corpus(&c.corpus)).collect::<Result<Vec<_>, _>>()?;
    let mut surfaces: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut add = |w: &str| {
        if seen.insert(w.to_string()) {
            surfaces.push(w.to_string());
        }
    };
    for line in base_lines.iter().chain(cue_lines.iter().flatten()) {
        line.split_whitespace().for_each(&mut add);
    }
    for c in cues {
        add(&c.surface);
    }
    if let Some(f) = fallback {
        add(f);
    }
    let mut vocab = Vocabulary::new(surfaces).map_err(|e| e.to_string())?;
    if let Some(f) = fallback {
        vocab = vocab.with_fallback(f).map_err(|e| e.to_string())?;
    }
    let tokenize = |lines: &[String]| -> Result<Vec<TokenSequence>, String> {
        lines.iter().map(|l| vocab.tokenize(l, Role::Prompt).map_err(|e| e.to_string())).collect()
    };
    let base = build_ngram_model(&tokenize(&base_lines)?, &vocab, order, k).map_err(|e| e.to_string())?;
    let mut model = ToyModel::new(base);
    for (c, lines) in cues.iter().zip(&cue_lines) {
        let table = build_ngram_model(&tokenize(lines)?, &vocab, order, k).map_err(|e| e.to_string())?;
        let id = vocab.id(&c.surface).expect("cue added to vocabulary");
        model = model.with_cue(id, table).map_err(|e| e.to_string())?;
    }
    Ok(model)
}
