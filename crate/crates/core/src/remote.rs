//! Client for endpoints that report top-k next-token log-probabilities, and
//! the densification that turns such reports into full logit vectors.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::LogitVector;
use crate::model::LanguageModel;
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_FLOOR_GAP: f64 = 10.0;
pub const WIRE_SCHEMA_VERSION: u32 = 1;
pub const ENV_REMOTE_URL: &str = "COS_REMOTE_URL";
pub const ENV_REMOTE_KEY: &str = "COS_REMOTE_KEY";

/// Wire types shared with the HTTP service.
pub mod wire {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct TopLogprobsRequest {
        #[serde(default = "schema_version")]
        pub schema_version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub prefix_ids: Option<Vec<TokenId>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub text: Option<String>,
        pub k: usize,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TokenLogprob {
        pub token: String,
        pub logprob: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TopLogprobsResponse {
        pub schema_version: u32,
        pub entries: Vec<TokenLogprob>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct VocabResponse {
        pub schema_version: u32,
        pub tokens: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub fallback: Option<String>,
    }

    pub fn schema_version() -> u32 {
        WIRE_SCHEMA_VERSION
    }
}

/// Top-k entries in descending log-probability order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseLogProbReport {
    entries: Vec<(String, f64)>,
    k: usize,
}

impl SparseLogProbReport {
    /// Sorts, rejects duplicates and non-finite values, and keeps at most `k`.
    pub fn new(mut entries: Vec<(String, f64)>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if let Some((t, v)) = entries.iter().find(|(_, v)| !v.is_finite() || *v > 1e-9) {
            return Err(Error::MalformedResponse(format!("bad log-probability {v} for {t:?}")));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut seen = std::collections::HashSet::new();
        if let Some((t, _)) = entries.iter().find(|(t, _)| !seen.insert(t.as_str())) {
            return Err(Error::MalformedResponse(format!("token {t:?} reported twice")));
        }
        entries.truncate(k);
        Ok(Self { entries, k })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_wire(resp: wire::TopLogprobsResponse, k: usize) -> Result<Self> {
        if resp.entries.len() > k {
            return Err(Error::MalformedResponse(format!("{} entries for k = {k}", resp.entries.len())));
        }
        Self::new(resp.entries.into_iter().map(|e| (e.token, e.logprob)).collect(), k)
    }

    pub fn to_wire(&self) -> wire::TopLogprobsResponse {
        wire::TopLogprobsResponse {
            schema_version: WIRE_SCHEMA_VERSION,
            entries: self
                .entries
                .iter()
                .map(|(token, logprob)| wire::TokenLogprob { token: token.clone(), logprob: *logprob })
                .collect(),
        }
    }
}

/// Report the `k` most probable tokens of a log-probability vector; ties
/// keep vocabulary order.
pub fn top_k_report(log_probs: &[f64], vocab: &Vocabulary, k: usize) -> Result<SparseLogProbReport> {
    if log_probs.len() != vocab.len() {
        return Err(Error::LengthMismatch { left: log_probs.len(), right: vocab.len() });
    }
    let mut idx: Vec<usize> = (0..log_probs.len()).collect();
    idx.sort_by(|&a, &b| log_probs[b].total_cmp(&log_probs[a]).then(a.cmp(&b)));
    let entries = idx.into_iter().take(k).map(|i| (vocab.tokens()[i].clone(), log_probs[i])).collect();
    SparseLogProbReport::new(entries, k)
}

/// Unreported tokens get `min(reported) - floor_gap`; reported ones keep
/// their values.
pub fn densify(report: &SparseLogProbReport, vocab: &Vocabulary, floor_gap: f64) -> Result<LogitVector> {
    if !(floor_gap > 0.0 && floor_gap.is_finite()) {
        return Err(Error::InvalidParameter(format!("floor_gap must be positive, got {floor_gap}")));
    }
    let (_, min) = report.entries.last().ok_or(Error::EmptyReport)?;
    let mut values = vec![min - floor_gap; vocab.len()];
    for (surface, lp) in &report.entries {
        let id = vocab.id(surface).ok_or_else(|| Error::UnknownToken(surface.clone()))?;
        values[id.index()] = *lp;
    }
    LogitVector::new(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    /// Entries requested per step; `None` asks for the whole vocabulary.
    pub top_k: Option<usize>,
    pub floor_gap: f64,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
            timeout: Duration::from_secs(30),
            top_k: None,
            floor_gap: DEFAULT_FLOOR_GAP,
        }
    }

    /// Reads `COS_REMOTE_URL` and `COS_REMOTE_KEY`; an explicit URL wins.
    pub fn from_env(url: Option<&str>) -> Result<Self> {
        let base = match url {
            Some(u) => u.to_string(),
            None => std::env::var(ENV_REMOTE_URL)
                .map_err(|_| Error::InvalidParameter(format!("{ENV_REMOTE_URL} is not set")))?,
        };
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var(ENV_REMOTE_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.saturating_mul(1u32 << attempt.min(16)).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrefixInput<'a> {
    Ids(&'a [TokenId]),
    Text(&'a str),
}

pub struct RemoteClient {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn send_once(&self, req: reqwest::blocking::RequestBuilder) -> Result<String> {
        let req = match &self.config.api_key {
            Some(key) => req.bearer_auth(key),
            None => req,
        };
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        match status.as_u16() {
            200..=299 => Ok(body),
            429 => Err(Error::RateLimited),
            s @ 500..=599 => Err(Error::Transport(format!("server error {s}: {body}"))),
            s => Err(Error::RemoteRejected { status: s, body }),
        }
    }

    /// Retries retryable failures with exponential backoff, up to
    /// `max_retries` extra attempts.
    fn with_retries(&self, build: impl Fn() -> reqwest::blocking::RequestBuilder) -> Result<String> {
        let mut attempt = 0;
        loop {
            match self.send_once(build()) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    thread::sleep(self.config.backoff(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    pub fn fetch_vocab(&self) -> Result<Vocabulary> {
        let url = format!("{}/v1/vocab", self.config.base_url);
        let body = self.with_retries(|| self.http.get(&url))?;
        let v: wire::VocabResponse = serde_json::from_str(&body).map_err(|e| Error::MalformedResponse(e.to_string()))?;
        let vocab = Vocabulary::new(v.tokens)?;
        match v.fallback {
            Some(f) => vocab.with_fallback(&f),
            None => Ok(vocab),
        }
    }

    pub fn fetch_top_logprobs(&self, prefix: PrefixInput<'_>, k: usize) -> Result<SparseLogProbReport> {
        let (prefix_ids, text) = match prefix {
            PrefixInput::Ids(ids) => (Some(ids.to_vec()), None),
            PrefixInput::Text(t) => (None, Some(t.to_string())),
        };
        let body = wire::TopLogprobsRequest { schema_version: WIRE_SCHEMA_VERSION, prefix_ids, text, k };
        let url = format!("{}/v1/top_logprobs", self.config.base_url);
        let raw = self.with_retries(|| self.http.post(&url).json(&body))?;
        let resp: wire::TopLogprobsResponse =
            serde_json::from_str(&raw).map_err(|e| Error::MalformedResponse(e.to_string()))?;
        SparseLogProbReport::from_wire(resp, k)
    }
}

pub fn fetch_top_logprobs(client: &RemoteClient, prefix: &[TokenId], k: usize) -> Result<SparseLogProbReport> {
    client.fetch_top_logprobs(PrefixInput::Ids(prefix), k)
}

/// A backend served over the top-logprobs protocol. Each step's sparse
/// report is densified before it enters the steering arithmetic.
pub struct RemoteModel {
    client: RemoteClient,
    vocab: Vocabulary,
    k: usize,
}

impl RemoteModel {
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let client = RemoteClient::new(config)?;
        let vocab = client.fetch_vocab()?;
        let k = client.config.top_k.unwrap_or(vocab.len()).clamp(1, vocab.len());
        Ok(Self { client, vocab, k })
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }
}

impl LanguageModel for RemoteModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, prefix: &[TokenId]) -> Result<LogitVector> {
        let report = fetch_top_logprobs(&self.client, prefix, self.k)?;
        densify(&report, &self.vocab, self.client.config.floor_gap)
    }

    fn describe(&self) -> String {
        format!("remote:{}", self.client.config.base_url)
    }
}
