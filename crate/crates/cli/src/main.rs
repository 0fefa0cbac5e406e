mod build;
mod config;
mod eval;
mod pipeline;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use costeer_core::jobs::{CandidateRecord, JobDefaults, JobKind, JobRecord, StrategyName};
use costeer_service::AppState;

use crate::config::{load_model, parse_grid, parse_list, parse_range, FileConfig};
use crate::pipeline::{Format, Job};

#[derive(Parser)]
#[command(name = "costeer", version, about = "Context-steered generation and inference over JSONL records")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one output per requested lambda for every record.
    Generate(RunArgs),
    /// Generate across an inclusive lambda range.
    Sweep(RunArgs),
    /// Posterior over a lambda grid for each record's observed text.
    InferLambda(RunArgs),
    /// Rank candidate contexts for each record's observed text.
    Classify(ClassifyArgs),
    /// Score candidate continuations under the steered model.
    Score(RunArgs),
    /// Compute a text metric over aligned line files.
    Eval(EvalArgs),
    /// Build a toy table file from line corpora.
    BuildToy(BuildArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Input JSONL file; stdin when absent or `-`.
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// `toy:<path>`, `remote:<url>` or `remote`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    context: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    neg_context: Option<String>,
    /// One value or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// `lo:hi:step`, inclusive.
    #[arg(long, allow_hyphen_values = true)]
    lambda_range: Option<String>,
    /// `lo:hi:step` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    classify_lambda: Option<f64>,
    /// greedy, temperature, top_k or top_p.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma list of stop tokens.
    #[arg(long)]
    stop: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Candidate contexts for records without their own: JSONL objects with
    /// `label`, `context` and optional `neg_context`, or `label<TAB>context` lines.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: eval::Metric,
    /// One text (or id, or number) per line.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    references: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.5)]
    k: f64,
    /// `CUE=FILE`; the cue token selects a table trained on FILE.
    #[arg(long)]
    cue: Vec<build::CueSpec>,
    #[arg(long)]
    fallback: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    bind: Option<String>,
    /// Require `Authorization: Bearer <token>` on non-health routes.
    #[arg(long)]
    token: Option<String>,
}

type CliResult<T> = Result<T, String>;

fn parse_strategy(s: &str) -> CliResult<StrategyName> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown strategy {s:?} (greedy, temperature, top_k, top_p)"))
}

fn merged_defaults(base: &JobDefaults, a: &RunArgs) -> CliResult<JobDefaults> {
    let mut d = base.clone();
    if a.context.is_some() || a.neg_context.is_some() {
        d.context = a.context.clone();
        d.neg_context = a.neg_context.clone();
    }
    if let Some(l) = &a.lambda {
        let list = parse_list(l)?;
        match list[..] {
            [one] => {
                d.lambda = one;
                d.lambda_list = None;
            }
            _ => d.lambda_list = Some(list),
        }
    }
    if let Some(r) = &a.lambda_range {
        d.lambda_range = Some(parse_range(r)?);
    }
    if let Some(g) = &a.grid {
        d.grid = Some(parse_grid(g)?);
    }
    if let Some(l) = a.classify_lambda {
        d.classify_lambda = l;
    }
    if let Some(s) = &a.strategy {
        d.strategy = Some(parse_strategy(s)?);
    }
    if let Some(t) = a.temperature {
        d.temperature = t;
    }
    if a.top_k.is_some() {
        d.top_k = a.top_k;
    }
    if a.top_p.is_some() {
        d.top_p = a.top_p;
    }
    if let Some(m) = a.max_tokens {
        d.max_tokens = m;
    }
    if let Some(s) = a.seed {
        d.seed = s;
    }
    if let Some(s) = &a.stop {
        d.stop = s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
    }
    Ok(d)
}

fn open_input(path: Option<&Path>) -> CliResult<Box<dyn BufRead>> {
    match path {
        None => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) if p == Path::new("-") => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) => Ok(Box::new(BufReader::new(File::open(p).map_err(|e| format!("{}: {e}", p.display()))?))),
    }
}

fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?))),
    }
}

fn read_candidates(path: &Path) -> CliResult<Vec<CandidateRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec = if line.trim_start().starts_with('{') {
            serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?
        } else {
            let mut parts = line.split('\t');
            let label = parts.next().unwrap_or_default().to_string();
            let context = parts.next().ok_or_else(|| format!("{}:{}: expected label<TAB>context", path.display(), i + 1))?;
            CandidateRecord { label, context: context.to_string(), neg_context: parts.next().map(str::to_string) }
        };
        out.push(rec);
    }
    if out.is_empty() {
        return Err(format!("{}: no candidates", path.display()));
    }
    Ok(out)
}

fn run_records(cfg: &FileConfig, kind: JobKind, args: &RunArgs, candidates: Option<Vec<CandidateRecord>>) -> CliResult<ExitCode> {
    let defaults = merged_defaults(&cfg.defaults, args)?;
    let format: Format = args.format.as_deref().or(cfg.format.as_deref()).unwrap_or("jsonl").parse()?;
    let jobs = args.jobs.or(cfg.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err("--jobs must be at least 1".into());
    }
    let uri = args.model.as_deref().or(cfg.model.as_deref()).ok_or("no model given (use --model or the config file)")?;
    let input = open_input(args.input.as_deref())?;
    let model = load_model(uri, &cfg.remote)?;
    let prepare = move |r: &mut JobRecord| {
        if r.candidates.is_none() {
            r.candidates.clone_from(&candidates);
        }
    };
    let job = Job { kind, model: model.as_ref(), defaults: &defaults, prepare: &prepare, jobs, format };
    let stats = pipeline::run(&job, input, open_output(args.output.as_deref())?).map_err(|e| e.to_string())?;
    Ok(if stats.failed > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn serve(cfg: &FileConfig, args: &ServeArgs) -> CliResult<ExitCode> {
    let uri = args.model.clone().or_else(|| cfg.model.clone()).ok_or("no model given (use --model or the config file)")?;
    let bind = args.bind.clone().or_else(|| cfg.service.bind.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());
    let token = args.token.clone().or_else(|| cfg.service.token.clone());
    let remote = cfg.remote.clone();
    tracing_subscriber::fmt().with_writer(io::stderr).init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| format!("{bind}: {e}"))?;
        let state = AppState::loading(cfg.defaults.clone(), token);
        let loader = state.clone();
        // Health answers 503 until the backend is installed.
        let load = tokio::task::spawn_blocking(move || load_model(&uri, &remote).map(|m| loader.install(m)));
        let server = tokio::spawn(costeer_service::serve(listener, state));
        load.await.map_err(|e| e.to_string())??;
        server.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        Ok(ExitCode::SUCCESS)
    })
}

fn dispatch(cli: Cli) -> CliResult<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.cmd {
        Command::Generate(a) => run_records(&cfg, JobKind::Generate, &a, None),
        Command::Sweep(a) => run_records(&cfg, JobKind::Sweep, &a, None),
        Command::InferLambda(a) => run_records(&cfg, JobKind::Infer, &a, None),
        Command::Score(a) => run_records(&cfg, JobKind::Score, &a, None),
        Command::Classify(a) => {
            let cands = a.candidates.as_deref().map(read_candidates).transpose()?;
            run_records(&cfg, JobKind::Classify, &a.run, cands)
        }
        Command::Eval(a) => {
            let out = open_output(a.output.as_deref())?;
            let outcome = eval::run(a.metric, &a.candidates, a.references.as_deref(), a.embeddings.as_deref(), out)?;
            Ok(if outcome.failed > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::BuildToy(a) => {
            let model = build::build(&a.corpus, &a.cue, a.order, a.k, a.fallback.as_deref())?;
            let file = File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
            model.write_to(BufWriter::new(file)).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve(a) => serve(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("costeer: {msg}");
            ExitCode::from(1)
        }
    }
}
