//! Record-level jobs shared by the command-line tool and the HTTP service.
//!
//! A [`JobRecord`] names a context, prompt and lambda settings in surface
//! text; the runners resolve it against a model and return a
//! [`ResultRecord`]. Both front ends call the same runners so a record gives
//! the same result through either.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    classify_context_placed, lambda_posterior_placed, score_continuations, ContextCandidate, LambdaGrid,
    DEFAULT_CLASSIFY_LAMBDA,
};
use crate::model::LanguageModel;
use crate::steering::generate::{generate_with, GenerateOptions};
use crate::steering::sampler::{SamplerConfig, Strategy, DEFAULT_TEMPERATURE};
use crate::steering::spec::{ContextPlacement, ContextTarget, SteeringSpec};
use crate::vocab::{Role, TokenId, Vocabulary};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_TOKENS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedText {
    pub text: String,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub label: String,
    #[serde(default)]
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_context: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Greedy,
    Temperature,
    TopK,
    TopP,
}

/// One line of job input. Absent fields fall back to [`JobDefaults`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_context: Option<String>,
    /// Several contexts with explicit weights, instead of `context`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<Vec<WeightedText>>,
    /// Insert contexts at this token index of the prompt instead of in front.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_position: Option<usize>,
    #[serde(default)]
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_range: Option<LambdaRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
    /// Text to explain, for lambda inference and classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidateRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuations: Option<Vec<String>>,
}

/// Settings applied when a record leaves a field out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobDefaults {
    pub context: Option<String>,
    pub neg_context: Option<String>,
    pub lambda: f64,
    pub lambda_list: Option<Vec<f64>>,
    pub lambda_range: Option<LambdaRange>,
    pub grid: Option<Vec<f64>>,
    pub classify_lambda: f64,
    pub max_tokens: usize,
    pub strategy: Option<StrategyName>,
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub seed: u64,
    pub stop: Vec<String>,
}

impl Default for JobDefaults {
    fn default() -> Self {
        Self {
            context: None,
            neg_context: None,
            lambda: 0.0,
            lambda_list: None,
            lambda_range: None,
            grid: None,
            classify_lambda: DEFAULT_CLASSIFY_LAMBDA,
            max_tokens: DEFAULT_MAX_TOKENS,
            strategy: None,
            temperature: DEFAULT_TEMPERATURE,
            top_k: None,
            top_p: None,
            seed: 0,
            stop: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub lambda: Option<f64>,
    pub text: String,
    pub tokens: usize,
    pub token_logprobs: Vec<f64>,
    pub mean_logprob: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub count: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mean_tokens: f64,
    pub mean_logprob: Option<f64>,
    pub warned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    /// `None` when the combination overflowed at this lambda.
    pub log_likelihood: Option<f64>,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub label: String,
    pub log_likelihood: Option<f64>,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub text: String,
    pub total: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ErrorBody {
    pub fn from_error(err: &Error) -> Self {
        Self { code: error_code(err).to_string(), message: err.to_string() }
    }
}

/// One line of job output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<GenerationOutput>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SweepSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<Vec<LambdaRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_lambda: Option<f64>,
    /// Candidates by descending posterior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<LabelRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<ScoreRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl ResultRecord {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            outputs: None,
            summary: None,
            posterior: None,
            map_lambda: None,
            ranking: None,
            map_label: None,
            scores: None,
            best: None,
            error: None,
        }
    }

    pub fn failed(id: impl Into<String>, err: &Error) -> Self {
        Self { error: Some(ErrorBody::from_error(err)), ..Self::new(id) }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// Stable machine-readable name for an error.
pub fn error_code(err: &Error) -> &'static str {
    match err {
        Error::UnknownToken(_) => "unknown_token",
        Error::TokenOutOfRange { .. } => "token_out_of_range",
        Error::InvalidVocabulary(_) => "invalid_vocabulary",
        Error::ContextWindowExceeded { .. } => "context_window_exceeded",
        Error::LengthMismatch { .. } => "length_mismatch",
        Error::NonFinite { .. } => "non_finite",
        Error::NonFiniteResult { .. } => "non_finite_result",
        Error::DegenerateDistribution => "degenerate_distribution",
        Error::EmptyCorpus => "empty_corpus",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::BudgetExceeded { .. } => "budget_exceeded",
        Error::InvalidSpec(_) => "invalid_spec",
        Error::EmptySequence => "empty_sequence",
        Error::EmptyCandidate(_) => "empty_candidate",
        Error::EmptyCandidates => "empty_candidates",
        Error::DuplicateLabel(_) => "duplicate_label",
        Error::AllLikelihoodsDegenerate => "all_likelihoods_degenerate",
        Error::DegenerateRange => "degenerate_range",
        Error::DegenerateVariance => "degenerate_variance",
        Error::ZeroNorm => "zero_norm",
        Error::TooShort { .. } => "too_short",
        Error::EmptyReference => "empty_reference",
        Error::InvalidRange(_) => "invalid_range",
        Error::EmptyReport => "empty_report",
        Error::Transport(_) => "transport",
        Error::RateLimited => "rate_limited",
        Error::RemoteRejected { .. } => "remote_rejected",
        Error::MalformedResponse(_) => "malformed_response",
        Error::Parse { .. } => "malformed_record",
        Error::Io(_) => "io",
    }
}

/// True when the failure lies with the backend rather than the request.
pub fn is_backend_error(err: &Error) -> bool {
    matches!(
        err,
        Error::Transport(_) | Error::RateLimited | Error::RemoteRejected { .. } | Error::MalformedResponse(_) | Error::Io(_)
    )
}

fn tokens(vocab: &Vocabulary, text: &str, role: Role) -> Result<Vec<TokenId>> {
    Ok(vocab.tokenize(text, role)?.into_tokens())
}

enum Steering {
    Target(ContextTarget),
    Multi(Vec<(Vec<TokenId>, f64)>),
}

struct Resolved<'r> {
    record: &'r JobRecord,
    defaults: &'r JobDefaults,
    vocab: &'r Vocabulary,
}

impl<'r> Resolved<'r> {
    fn prompt(&self) -> Result<Vec<TokenId>> {
        let p = tokens(self.vocab, &self.record.prompt, Role::Prompt)?;
        if p.is_empty() {
            return Err(Error::InvalidSpec("prompt must be nonempty".into()));
        }
        Ok(p)
    }

    fn placement(&self) -> ContextPlacement {
        self.record.context_position.map_or(ContextPlacement::Prepend, ContextPlacement::Insert)
    }

    fn target_from(&self, context: Option<&str>, neg: Option<&str>) -> Result<ContextTarget> {
        match (context, neg) {
            (_, Some(_)) if context.is_none() => Err(Error::InvalidSpec("neg_context requires context".into())),
            (Some(c), Some(n)) => Ok(ContextTarget::Pair {
                positive: tokens(self.vocab, c, Role::Context)?,
                negative: tokens(self.vocab, n, Role::Context)?,
            }),
            (c, _) => Ok(ContextTarget::Single(tokens(self.vocab, c.unwrap_or(""), Role::Context)?)),
        }
    }

    fn steering(&self) -> Result<Steering> {
        let r = self.record;
        if let Some(list) = &r.contexts {
            if r.context.is_some() || r.neg_context.is_some() {
                return Err(Error::InvalidSpec("contexts cannot be combined with context or neg_context".into()));
            }
            let weighted = list
                .iter()
                .map(|w| Ok((tokens(self.vocab, &w.text, Role::Context)?, w.mu)))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Steering::Multi(weighted));
        }
        if r.context.is_some() || r.neg_context.is_some() {
            self.target_from(r.context.as_deref(), r.neg_context.as_deref()).map(Steering::Target)
        } else {
            self.target_from(self.defaults.context.as_deref(), self.defaults.neg_context.as_deref())
                .map(Steering::Target)
        }
    }

    fn target(&self) -> Result<ContextTarget> {
        match self.steering()? {
            Steering::Target(t) => Ok(t),
            Steering::Multi(_) => Err(Error::InvalidSpec("weighted contexts are only supported for generation".into())),
        }
    }

    fn lambdas(&self) -> Result<Vec<f64>> {
        let list = match (&self.record.lambda_list, self.record.lambda) {
            (Some(l), _) => l.clone(),
            (None, Some(l)) => vec![l],
            (None, None) => self.defaults.lambda_list.clone().unwrap_or_else(|| vec![self.defaults.lambda]),
        };
        if list.is_empty() {
            return Err(Error::InvalidSpec("lambda_list is empty".into()));
        }
        if let Some(l) = list.iter().find(|l| !l.is_finite()) {
            return Err(Error::InvalidSpec(format!("lambda must be finite, got {l}")));
        }
        Ok(list)
    }

    fn sampler(&self) -> Result<SamplerConfig> {
        let r = self.record;
        let d = self.defaults;
        let temperature = r.temperature.unwrap_or(d.temperature);
        let top_k = r.top_k.or(d.top_k);
        let top_p = r.top_p.or(d.top_p);
        let name = r.strategy.or(d.strategy).unwrap_or(if top_k.is_some() {
            StrategyName::TopK
        } else if top_p.is_some() {
            StrategyName::TopP
        } else if temperature == 0.0 {
            StrategyName::Greedy
        } else {
            StrategyName::Temperature
        });
        let missing = |f: &str| Error::InvalidParameter(format!("strategy needs {f}"));
        let strategy = match name {
            StrategyName::Greedy => Strategy::Greedy,
            StrategyName::Temperature => Strategy::Temperature { temperature },
            StrategyName::TopK => Strategy::TopK { k: top_k.ok_or_else(|| missing("top_k"))?, temperature },
            StrategyName::TopP => Strategy::TopP { p: top_p.ok_or_else(|| missing("top_p"))?, temperature },
        };
        SamplerConfig::new(strategy, r.seed.unwrap_or(d.seed))
    }

    fn stop(&self) -> Result<Vec<TokenId>> {
        let surfaces = self.record.stop.as_ref().unwrap_or(&self.defaults.stop);
        surfaces
            .iter()
            .map(|s| self.vocab.id(s).ok_or_else(|| Error::UnknownToken(s.clone())))
            .collect()
    }

    fn observed(&self) -> Result<Vec<TokenId>> {
        let text = self.record.observed.as_deref().ok_or(Error::InvalidSpec("observed text is required".into()))?;
        let x = tokens(self.vocab, text, Role::Generated)?;
        if x.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(x)
    }

    fn grid(&self) -> Result<LambdaGrid> {
        match self.record.grid.as_ref().or(self.defaults.grid.as_ref()) {
            Some(g) => LambdaGrid::new(g.clone()),
            None => Ok(LambdaGrid::default()),
        }
    }
}

fn generate_outputs(model: &dyn LanguageModel, r: &Resolved<'_>, lambdas: &[f64]) -> Result<Vec<GenerationOutput>> {
    let prompt = r.prompt()?;
    let sampler = r.sampler()?;
    let max_tokens = r.record.max_tokens.unwrap_or(r.defaults.max_tokens);
    let stop = r.stop()?;
    let options = GenerateOptions { stop: (!stop.is_empty()).then_some(stop.as_slice()), ..Default::default() };
    let vocab = model.vocab();
    // Every lambda restarts from the record's seed, so an output does not
    // depend on the other entries of the list.
    let run = |spec: SteeringSpec, lambda: Option<f64>| -> Result<GenerationOutput> {
        let trace = generate_with(model, &spec, &sampler, max_tokens, &options)?;
        Ok(GenerationOutput {
            lambda,
            text: vocab.detokenize(trace.content_tokens())?,
            tokens: trace.tokens.len(),
            token_logprobs: trace.steps.iter().map(|s| s.prob.ln()).collect(),
            mean_logprob: trace.mean_logprob(),
            warnings: trace.warnings.iter().map(ToString::to_string).collect(),
        })
    };
    match r.steering()? {
        Steering::Multi(weighted) => {
            if r.record.lambda.is_some() || r.record.lambda_list.is_some() || r.record.lambda_range.is_some() {
                return Err(Error::InvalidSpec("weighted contexts carry their own weights; drop lambda".into()));
            }
            let spec = SteeringSpec::multi(prompt, weighted)?.with_placement(r.placement())?;
            Ok(vec![run(spec, None)?])
        }
        Steering::Target(target) => lambdas
            .iter()
            .map(|&lambda| {
                let spec = SteeringSpec::from_target(&target, prompt.clone(), lambda)?.with_placement(r.placement())?;
                run(spec, Some(lambda))
            })
            .collect(),
    }
}

pub fn run_generate(model: &dyn LanguageModel, record: &JobRecord, defaults: &JobDefaults) -> Result<ResultRecord> {
    let r = Resolved { record, defaults, vocab: model.vocab() };
    let lambdas = r.lambdas()?;
    let outputs = generate_outputs(model, &r, &lambdas)?;
    Ok(ResultRecord { outputs: Some(outputs), ..ResultRecord::new(&record.id) })
}

/// Expands an inclusive lambda range and generates at each point.
pub fn run_sweep(model: &dyn LanguageModel, record: &JobRecord, defaults: &JobDefaults) -> Result<ResultRecord> {
    let r = Resolved { record, defaults, vocab: model.vocab() };
    let range = record
        .lambda_range
        .or(defaults.lambda_range)
        .ok_or_else(|| Error::InvalidRange("sweep needs a lambda range".into()))?;
    let grid = LambdaGrid::range(range.lo, range.hi, range.step)?;
    let outputs = generate_outputs(model, &r, grid.values())?;
    let n = outputs.len() as f64;
    let logprobs: Vec<f64> = outputs.iter().filter_map(|o| o.mean_logprob).collect();
    let summary = SweepSummary {
        count: outputs.len(),
        lambda_min: grid.values()[0],
        lambda_max: grid.values()[grid.len() - 1],
        mean_tokens: outputs.iter().map(|o| o.tokens as f64).sum::<f64>() / n,
        mean_logprob: (!logprobs.is_empty()).then(|| logprobs.iter().sum::<f64>() / logprobs.len() as f64),
        warned: outputs.iter().filter(|o| !o.warnings.is_empty()).count(),
    };
    Ok(ResultRecord { outputs: Some(outputs), summary: Some(summary), ..ResultRecord::new(&record.id) })
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn run_infer(model: &dyn LanguageModel, record: &JobRecord, defaults: &JobDefaults) -> Result<ResultRecord> {
    let r = Resolved { record, defaults, vocab: model.vocab() };
    let post =
        lambda_posterior_placed(model, &r.target()?, &r.prompt()?, r.placement(), &r.observed()?, &r.grid()?)?;
    let rows = post
        .support
        .iter()
        .map(|e| LambdaRow { lambda: e.candidate, log_likelihood: finite(e.log_likelihood), posterior: e.posterior })
        .collect();
    Ok(ResultRecord {
        posterior: Some(rows),
        map_lambda: Some(post.map_entry().candidate),
        ..ResultRecord::new(&record.id)
    })
}

pub fn run_classify(model: &dyn LanguageModel, record: &JobRecord, defaults: &JobDefaults) -> Result<ResultRecord> {
    let r = Resolved { record, defaults, vocab: model.vocab() };
    let raw = record.candidates.as_deref().unwrap_or_default();
    if raw.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let candidates = raw
        .iter()
        .map(|c| {
            Ok(ContextCandidate { label: c.label.clone(), target: r.target_from(Some(&c.context), c.neg_context.as_deref())? })
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda = record.lambda.unwrap_or(defaults.classify_lambda);
    let post = classify_context_placed(model, &candidates, &r.prompt()?, r.placement(), &r.observed()?, lambda)?;
    let ranking = post
        .ranking()
        .into_iter()
        .map(|i| {
            let e = &post.support[i];
            LabelRow { label: e.candidate.clone(), log_likelihood: finite(e.log_likelihood), posterior: e.posterior }
        })
        .collect();
    Ok(ResultRecord {
        ranking: Some(ranking),
        map_label: Some(post.map_entry().candidate.clone()),
        ..ResultRecord::new(&record.id)
    })
}

pub fn run_score(model: &dyn LanguageModel, record: &JobRecord, defaults: &JobDefaults) -> Result<ResultRecord> {
    let r = Resolved { record, defaults, vocab: model.vocab() };
    let texts = record.continuations.as_deref().unwrap_or_default();
    let cands = texts.iter().map(|t| tokens(r.vocab, t, Role::Generated)).collect::<Result<Vec<_>>>()?;
    let lambda = record.lambda.unwrap_or(defaults.lambda);
    let spec = SteeringSpec::from_target(&r.target()?, r.prompt()?, lambda)?.with_placement(r.placement())?;
    let scored = score_continuations(model, &spec, &cands)?;
    let rows = texts
        .iter()
        .zip(&scored.scores)
        .map(|(t, s)| ScoreRow { text: t.clone(), total: s.total, mean: s.mean })
        .collect();
    Ok(ResultRecord { scores: Some(rows), best: Some(scored.best), ..ResultRecord::new(&record.id) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobKind {
    Generate,
    Sweep,
    Infer,
    Classify,
    Score,
}

impl JobKind {
    pub fn run(self, model: &dyn LanguageModel, record: &JobRecord, defaults: &JobDefaults) -> Result<ResultRecord> {
        if let Some(v) = record.schema_version.filter(|v| *v != SCHEMA_VERSION) {
            return Err(Error::InvalidSpec(format!("unsupported schema_version {v}")));
        }
        match self {
            JobKind::Generate => run_generate(model, record, defaults),
            JobKind::Sweep => run_sweep(model, record, defaults),
            JobKind::Infer => run_infer(model, record, defaults),
            JobKind::Classify => run_classify(model, record, defaults),
            JobKind::Score => run_score(model, record, defaults),
        }
    }

    /// Runs a record, folding a failure into the record's `error` field.
    pub fn run_or_error(self, model: &dyn LanguageModel, record: &JobRecord, defaults: &JobDefaults) -> ResultRecord {
        self.run(model, record, defaults).unwrap_or_else(|e| ResultRecord::failed(&record.id, &e))
    }
}

/// Parses one input line.
pub fn parse_record(line: &str, line_no: usize) -> Result<JobRecord> {
    serde_json::from_str(line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::ngram::build_ngram_model;
    use crate::reference::toy::ToyModel;
    use crate::vocab::TokenSequence;

    fn model() -> ToyModel {
        let v = Vocabulary::new(["the", "cat", "dog", "sat", "ran", "."]).unwrap();
        let corpus: Vec<TokenSequence> = ["the cat sat .", "the dog ran .", "the cat ran .", "dog sat the cat"]
            .iter()
            .map(|l| v.tokenize(l, Role::Prompt).unwrap())
            .collect();
        build_ngram_model(&corpus, &v, 3, 0.5).unwrap().into()
    }

    fn record(json: &str) -> JobRecord {
        parse_record(json, 1).unwrap()
    }

    #[test]
    fn lambda_list_order_is_kept() {
        let m = model();
        let r = record(r#"{"id":"x","context":"dog","prompt":"the","lambda_list":[-1,0,3],"max_tokens":3}"#);
        let out = run_generate(&m, &r, &JobDefaults::default()).unwrap();
        let lambdas: Vec<_> = out.outputs.unwrap().iter().map(|o| o.lambda).collect();
        assert_eq!(lambdas, vec![Some(-1.0), Some(0.0), Some(3.0)]);
    }

    #[test]
    fn outputs_do_not_depend_on_list_position() {
        let m = model();
        let d = JobDefaults::default();
        let all = run_generate(&m, &record(r#"{"context":"dog","prompt":"the","lambda_list":[0,2],"seed":9}"#), &d).unwrap();
        let one = run_generate(&m, &record(r#"{"context":"dog","prompt":"the","lambda":2,"seed":9}"#), &d).unwrap();
        assert_eq!(all.outputs.unwrap()[1], one.outputs.unwrap()[0]);
    }

    #[test]
    fn sweep_expands_inclusive_range() {
        let m = model();
        let r = record(r#"{"id":"s","context":"dog","prompt":"the","lambda_range":{"lo":-1,"hi":3,"step":1}}"#);
        let out = run_sweep(&m, &r, &JobDefaults::default()).unwrap();
        let lambdas: Vec<_> = out.outputs.unwrap().iter().map(|o| o.lambda.unwrap()).collect();
        assert_eq!(lambdas, vec![-1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(out.summary.unwrap().count, 5);
        let wide = record(r#"{"context":"dog","prompt":"the","lambda_range":{"lo":-6,"hi":6,"step":1},"max_tokens":2}"#);
        for o in run_sweep(&m, &wide, &JobDefaults::default()).unwrap().outputs.unwrap() {
            let warned = o.warnings.iter().any(|w| w == "LambdaOutOfRecommendedRange");
            assert_eq!(warned, o.lambda.unwrap().abs() > 4.0);
        }
        let bad = record(r#"{"prompt":"the","lambda_range":{"lo":0,"hi":1,"step":0}}"#);
        assert!(matches!(run_sweep(&m, &bad, &JobDefaults::default()), Err(Error::InvalidRange(_))));
    }

    #[test]
    fn invariants_are_enforced() {
        let m = model();
        let d = JobDefaults::default();
        let neg_only = record(r#"{"neg_context":"dog","prompt":"the"}"#);
        assert!(matches!(run_generate(&m, &neg_only, &d), Err(Error::InvalidSpec(_))));
        assert!(matches!(run_generate(&m, &record(r#"{"prompt":""}"#), &d), Err(Error::InvalidSpec(_))));
        assert!(parse_record(r#"{"prompt":"the","lamda":1}"#, 4).is_err());
        let failed = JobKind::Generate.run_or_error(&m, &record(r#"{"id":"q","prompt":"zebra"}"#), &d);
        assert_eq!(failed.error.unwrap().code, "unknown_token");
    }

    #[test]
    fn infer_and_classify_shapes() {
        let m = model();
        let d = JobDefaults::default();
        let r = record(r#"{"id":"i","context":"dog","prompt":"the","observed":"cat sat ."}"#);
        let out = run_infer(&m, &r, &d).unwrap();
        let rows = out.posterior.unwrap();
        assert_eq!(rows.len(), 17);
        assert!((rows.iter().map(|r| r.posterior).sum::<f64>() - 1.0).abs() < 1e-9);
        let c = record(
            r#"{"prompt":"the","observed":"cat sat","candidates":[{"label":"d","context":"dog"},{"label":"c","context":"cat"}]}"#,
        );
        let out = run_classify(&m, &c, &d).unwrap();
        assert_eq!(out.ranking.as_ref().unwrap().len(), 2);
        assert_eq!(out.map_label.as_deref(), Some(out.ranking.unwrap()[0].label.as_str()));
        let empty = record(r#"{"prompt":"the","observed":"cat"}"#);
        assert_eq!(run_classify(&m, &empty, &d), Err(Error::EmptyCandidates));
    }

    #[test]
    fn result_records_round_trip() {
        let m = model();
        let r = record(r#"{"id":"r","context":"dog","prompt":"the","lambda_list":[0.5,1.25]}"#);
        let out = run_generate(&m, &r, &JobDefaults::default()).unwrap();
        let line = serde_json::to_string(&out).unwrap();
        assert!(!line.contains('\n'));
        assert_eq!(serde_json::from_str::<ResultRecord>(&line).unwrap(), out);
    }

    #[test]
    fn scoring() {
        let m = model();
        let r = record(r#"{"prompt":"the","context":"dog","continuations":["cat sat","dog ran ."]}"#);
        let out = run_score(&m, &r, &JobDefaults::default()).unwrap();
        assert_eq!(out.scores.unwrap().len(), 2);
        assert!(out.best.is_some());
    }
}
