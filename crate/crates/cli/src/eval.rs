//! Metric evaluation over aligned line files.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use costeer_core::jobs::ErrorBody;
use costeer_core::metrics::{
    coherence_by_id, diversity_text, rouge1_text, rouge_l_text, spearman_test, EmbeddingFile, RougeScore,
};
use costeer_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Diversity,
    Rouge1,
    RougeL,
    Coherence,
    Spearman,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Value {
    Scalar { value: f64 },
    Rouge(RougeScore),
    Error { error: ErrorBody },
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    index: usize,
    metric: &'a str,
    #[serde(flatten)]
    value: Value,
}

#[derive(Debug, Serialize)]
struct Aggregate<'a> {
    metric: &'a str,
    count: usize,
    failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_rouge: Option<RougeScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write<W: Write>(out: &mut W, v: &impl Serialize) -> Result<(), String> {
    let line = serde_json::to_string(v).map_err(|e| e.to_string())?;
    writeln!(out, "{line}").map_err(|e| e.to_string())
}

fn name(m: Metric) -> &'static str {
    match m {
        Metric::Diversity => "diversity",
        Metric::Rouge1 => "rouge1",
        Metric::RougeL => "rouge_l",
        Metric::Coherence => "coherence",
        Metric::Spearman => "spearman",
    }
}

pub struct EvalOutcome {
    pub failed: usize,
}

/// Writes one row per record and a final aggregate row.
pub fn run<W: Write>(
    metric: Metric,
    candidates: &Path,
    references: Option<&Path>,
    embeddings: Option<&Path>,
    mut out: W,
) -> Result<EvalOutcome, String> {
    let cand = read_lines(candidates)?;
    let refs = match references {
        Some(p) => Some(read_lines(p)?),
        None if metric == Metric::Diversity => None,
        None => return Err(format!("{} needs --references", name(metric))),
    };
    if let Some(r) = &refs {
        if r.len() != cand.len() {
            return Err(Error::LengthMismatch { left: cand.len(), right: r.len() }.to_string());
        }
    }
    let mname = name(metric);

    if metric == Metric::Spearman {
        let parse = |lines: &[String]| -> Result<Vec<f64>, String> {
            lines.iter().map(|l| l.trim().parse::<f64>().map_err(|e| format!("bad number {l:?}: {e}"))).collect()
        };
        let x = parse(&cand)?;
        let y = parse(refs.as_deref().unwrap_or_default())?;
        let t = spearman_test(&x, &y).map_err(|e| e.to_string())?;
        write(&mut out, &Aggregate { metric: mname, count: x.len(), failed: 0, mean: Some(t.rho), mean_rouge: None, p_value: Some(t.p_value) })?;
        return Ok(EvalOutcome { failed: 0 });
    }

    let provider = match metric {
        Metric::Coherence => {
            let p = embeddings.ok_or("coherence needs --embeddings")?;
            Some(EmbeddingFile::load(p).map_err(|e| format!("{}: {e}", p.display()))?)
        }
        _ => None,
    };
    let (mut failed, mut sum, mut n) = (0usize, 0.0, 0usize);
    let mut rouge_sum = RougeScore { precision: 0.0, recall: 0.0, f1: 0.0 };
    for (i, c) in cand.iter().enumerate() {
        let r = refs.as_ref().map(|r| r[i].as_str());
        let value: Result<Value, Error> = match metric {
            Metric::Diversity => diversity_text(c).map(|value| Value::Scalar { value }),
            Metric::Rouge1 => rouge1_text(c, r.unwrap_or_default()).map(Value::Rouge),
            Metric::RougeL => rouge_l_text(c, r.unwrap_or_default()).map(Value::Rouge),
            Metric::Coherence => coherence_by_id(provider.as_ref().expect("loaded above"), c.trim(), r.unwrap_or_default().trim())
                .map(|value| Value::Scalar { value }),
            Metric::Spearman => unreachable!("handled above"),
        };
        let value = match value {
            Ok(v) => {
                n += 1;
                match &v {
                    Value::Scalar { value } => sum += value,
                    Value::Rouge(s) => {
                        rouge_sum.precision += s.precision;
                        rouge_sum.recall += s.recall;
                        rouge_sum.f1 += s.f1;
                    }
                    Value::Error { .. } => {}
                }
                v
            }
            Err(e) => {
                failed += 1;
                Value::Error { error: ErrorBody::from_error(&e) }
            }
        };
        write(&mut out, &Row { index: i, metric: mname, value })?;
    }
    let is_rouge = matches!(metric, Metric::Rouge1 | Metric::RougeL);
    let k = n as f64;
    let agg = Aggregate {
        metric: mname,
        count: cand.len(),
        failed,
        mean: (!is_rouge && n > 0).then(|| sum / k),
        mean_rouge: (is_rouge && n > 0).then(|| RougeScore {
            precision: rouge_sum.precision / k,
            recall: rouge_sum.recall / k,
            f1: rouge_sum.f1 / k,
        }),
        p_value: None,
    };
    write(&mut out, &agg)?;
    Ok(EvalOutcome { failed })
}
