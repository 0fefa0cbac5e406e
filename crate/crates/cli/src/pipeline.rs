//! Streaming record processing with an order-preserving worker pool.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use costeer_core::jobs::{parse_record, JobDefaults, JobKind, JobRecord, ResultRecord};
use costeer_core::{Error, LanguageModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            _ => Err(format!("unknown format {s:?} (expected jsonl or tsv)")),
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Stats {
    pub records: usize,
    pub failed: usize,
}

pub struct Job<'a> {
    pub kind: JobKind,
    pub model: &'a dyn LanguageModel,
    pub defaults: &'a JobDefaults,
    /// Applied to each parsed record before it runs.
    pub prepare: &'a (dyn Fn(&mut JobRecord) + Sync),
    pub jobs: usize,
    pub format: Format,
}

/// Best-effort id for a line that failed to parse as a record.
fn salvage_id(line: &str) -> String {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string))
        .unwrap_or_default()
}

fn process(job: &Job<'_>, line_no: usize, line: &str) -> ResultRecord {
    match parse_record(line, line_no) {
        Ok(mut record) => {
            (job.prepare)(&mut record);
            job.kind.run_or_error(job.model, &record, job.defaults)
        }
        Err(e) => ResultRecord::failed(salvage_id(line), &e),
    }
}

fn tsv_clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn tsv_header(kind: JobKind) -> &'static str {
    match kind {
        JobKind::Generate | JobKind::Sweep => "id\tlambda\ttext\tmean_logprob\twarnings",
        JobKind::Infer => "id\tlambda\tlog_likelihood\tposterior\tmap",
        JobKind::Classify => "id\tlabel\tlog_likelihood\tposterior\tmap",
        JobKind::Score => "id\tindex\ttotal\tmean\tbest",
    }
}

pub fn tsv_rows(r: &ResultRecord) -> Vec<String> {
    let id = tsv_clean(&r.id);
    if let Some(e) = &r.error {
        return vec![format!("{id}\terror\t{}\t{}\t", e.code, tsv_clean(&e.message))];
    }
    let mut rows = Vec::new();
    for o in r.outputs.iter().flatten() {
        rows.push(format!(
            "{id}\t{}\t{}\t{}\t{}",
            opt(o.lambda),
            tsv_clean(&o.text),
            opt(o.mean_logprob),
            o.warnings.join(",")
        ));
    }
    for p in r.posterior.iter().flatten() {
        let map = r.map_lambda == Some(p.lambda);
        rows.push(format!("{id}\t{}\t{}\t{}\t{}", p.lambda, opt(p.log_likelihood), p.posterior, u8::from(map)));
    }
    for p in r.ranking.iter().flatten() {
        let map = r.map_label.as_deref() == Some(p.label.as_str());
        rows.push(format!(
            "{id}\t{}\t{}\t{}\t{}",
            tsv_clean(&p.label),
            opt(p.log_likelihood),
            p.posterior,
            u8::from(map)
        ));
    }
    for (i, s) in r.scores.iter().flatten().enumerate() {
        rows.push(format!("{id}\t{i}\t{}\t{}\t{}", s.total, s.mean, u8::from(r.best == Some(i))));
    }
    rows
}

fn emit<W: Write>(out: &mut W, format: Format, r: &ResultRecord) -> Result<(), Error> {
    match format {
        Format::Jsonl => {
            let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Format::Tsv => {
            for row in tsv_rows(r) {
                writeln!(out, "{row}")?;
            }
        }
    }
    Ok(())
}

/// Reads records line by line and writes one result per record in input
/// order. At most `jobs * 4` records are held in memory at once.
pub fn run<R: BufRead, W: Write>(job: &Job<'_>, input: R, mut out: W) -> Result<Stats, Error> {
    let mut stats = Stats::default();
    if job.format == Format::Tsv {
        writeln!(out, "{}", tsv_header(job.kind))?;
    }
    let workers = job.jobs.max(1);
    let chunk = workers * 4;
    let mut batch: Vec<(usize, String)> = Vec::with_capacity(chunk);
    let mut lines = input.lines().enumerate();
    loop {
        batch.clear();
        for (i, line) in lines.by_ref() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            batch.push((i + 1, line));
            if batch.len() == chunk {
                break;
            }
        }
        if batch.is_empty() {
            break;
        }
        let results = run_batch(job, &batch, workers);
        for r in &results {
            stats.records += 1;
            stats.failed += usize::from(r.is_error());
            emit(&mut out, job.format, r)?;
        }
        out.flush()?;
    }
    Ok(stats)
}

fn run_batch(job: &Job<'_>, batch: &[(usize, String)], workers: usize) -> Vec<ResultRecord> {
    if workers == 1 || batch.len() == 1 {
        return batch.iter().map(|(n, l)| process(job, *n, l)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<ResultRecord>> = vec![None; batch.len()];
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers.min(batch.len()))
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some((n, l)) = batch.get(i) else { break };
                        done.push((i, process(job, *n, l)));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}
