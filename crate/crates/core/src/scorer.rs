//! Entailment scoring.
//!
//! The NLI model is generative: it answers "no entailment" or "entailment"
//! by emitting a short token sequence. A backend reports the logits of the
//! four two-token subsequences `_0`, `_</s>`, `10` and `1</s>`. We softmax
//! over those four, read `_0` as "no entailment" and `1</s>` as
//! "entailment", and fuse the two probabilities into one score in `[-1, 1]`
//! by subtraction.
//!
//! ```
//! use docaug::scorer::{fuse_scores, RawNliLogits};
//!
//! let s = fuse_scores(&RawNliLogits::new([0.0, 0.0, 0.0, 0.0])).unwrap();
//! assert_eq!(s.p_entail, 0.25);
//! assert_eq!(s.fused, 0.0);
//! ```

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::corpus::normalize_surface;
use crate::retry::{retry_with_backoff, RetryPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("non-finite logit {value} at position {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("invalid probabilities p_entail={p_entail}, p_no_entail={p_no_entail}")]
    InvalidProbabilities { p_entail: f64, p_no_entail: f64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scoring service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Logits of `_0`, `_</s>`, `10`, `1</s>`, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawNliLogits(pub [f64; 4]);

impl RawNliLogits {
    pub const NO_ENTAIL: usize = 0;
    pub const ENTAIL: usize = 3;

    pub fn new(logits: [f64; 4]) -> Self {
        RawNliLogits(logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailmentScore {
    pub p_entail: f64,
    pub p_no_entail: f64,
    /// `p_entail - p_no_entail`.
    pub fused: f64,
}

impl EntailmentScore {
    /// For backends that report the two probabilities directly.
    pub fn from_probabilities(p_entail: f64, p_no_entail: f64) -> Result<Self, ScoreError> {
        let ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !ok(p_entail) || !ok(p_no_entail) || p_entail + p_no_entail > 1.0 + 1e-9 {
            return Err(ScoreError::InvalidProbabilities { p_entail, p_no_entail });
        }
        Ok(EntailmentScore {
            p_entail,
            p_no_entail,
            fused: p_entail - p_no_entail,
        })
    }
}

/// Four-way softmax, then entailment minus no-entailment probability.
pub fn fuse_scores(logits: &RawNliLogits) -> Result<EntailmentScore, ScoreError> {
    if let Some((index, &value)) = logits.0.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(ScoreError::NonFinite { index, value });
    }
    let max = logits.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.0.map(|l| (l - max).exp());
    let total: f64 = exps.iter().sum();
    let p_entail = exps[RawNliLogits::ENTAIL] / total;
    let p_no_entail = exps[RawNliLogits::NO_ENTAIL] / total;
    Ok(EntailmentScore {
        p_entail,
        p_no_entail,
        fused: (exps[RawNliLogits::ENTAIL] - exps[RawNliLogits::NO_ENTAIL]) / total,
    })
}

/// One premise/hypothesis pair as sent to the scoring service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
    /// Entity surfaces in both sentences. In-process backends may use
    /// these; they are never sent over the wire.
    #[serde(skip)]
    pub entities: Vec<String>,
}

impl NliPair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        NliPair {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
            entities: Vec::new(),
        }
    }

    pub fn with_entities(mut self, entities: Vec<String>) -> Self {
        self.entities = entities;
        self
    }
}

/// Per-pair backend result: raw logits, or precomputed probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendOutput {
    Logits { logits: RawNliLogits },
    Probabilities { p_entail: f64, p_no_entail: f64 },
}

impl BackendOutput {
    pub fn to_score(&self) -> Result<EntailmentScore, ScoreError> {
        match *self {
            BackendOutput::Logits { ref logits } => fuse_scores(logits),
            BackendOutput::Probabilities { p_entail, p_no_entail } => {
                EntailmentScore::from_probabilities(p_entail, p_no_entail)
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    pairs: &'a [NliPair],
}

#[derive(Debug, Deserialize)]
pub struct WireResponse {
    pub results: Vec<BackendOutput>,
}

#[async_trait]
pub trait NliBackend: Send + Sync {
    /// Must return exactly one output per pair, in order.
    async fn score(&self, pairs: &[NliPair]) -> Result<Vec<BackendOutput>, BackendError>;
}

/// HTTP client for a scoring service: `POST {pairs: [{premise, hypothesis}]}`
/// answered by `{results: [{logits: [..4]} | {p_entail, p_no_entail}]}`.
pub struct HttpNliBackend {
    http: reqwest::Client,
    url: String,
}

impl HttpNliBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpNliBackend { http, url: url.into() })
    }
}

#[async_trait]
impl NliBackend for HttpNliBackend {
    async fn score(&self, pairs: &[NliPair]) -> Result<Vec<BackendOutput>, BackendError> {
        let resp = self
            .http
            .post(&self.url)
            .json(&WireRequest { pairs })
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        let parsed: WireResponse = serde_json::from_str(&body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        Ok(parsed.results)
    }
}

/// Deterministic stand-in for an NLI model.
///
/// Scores a pair by the Jaccard overlap `J` of the lowercase word sets of
/// premise and hypothesis, ignoring words of the pair's entity surfaces,
/// and reports `p_entail = J`, `p_no_entail = 1 - J`, so the fused score
/// is `2J - 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalBackend;

impl LexicalBackend {
    pub fn overlap(pair: &NliPair) -> f64 {
        let masked: BTreeSet<String> = pair.entities.iter().flat_map(|e| words(e)).collect();
        let a: BTreeSet<String> = words(&pair.premise).filter(|w| !masked.contains(w)).collect();
        let b: BTreeSet<String> = words(&pair.hypothesis).filter(|w| !masked.contains(w)).collect();
        let union = a.union(&b).count();
        if union == 0 {
            return 0.0;
        }
        a.intersection(&b).count() as f64 / union as f64
    }
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(normalize_surface)
}

#[async_trait]
impl NliBackend for LexicalBackend {
    async fn score(&self, pairs: &[NliPair]) -> Result<Vec<BackendOutput>, BackendError> {
        Ok(pairs
            .iter()
            .map(|p| {
                let j = Self::overlap(p);
                BackendOutput::Probabilities {
                    p_entail: j,
                    p_no_entail: 1.0 - j,
                }
            })
            .collect())
    }
}

/// Marker for a pair whose score could not be obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringUnavailable {
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub batch_size: usize,
    pub max_in_flight: usize,
    #[serde(flatten)]
    pub retry: RetryPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            batch_size: 64,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Batches pairs to a backend with retries and a bound on concurrent requests.
#[derive(Clone)]
pub struct ScorerGateway {
    backend: Arc<dyn NliBackend>,
    config: GatewayConfig,
    in_flight: Arc<Semaphore>,
}

impl ScorerGateway {
    pub fn new(backend: Arc<dyn NliBackend>, config: GatewayConfig) -> Self {
        let config = GatewayConfig {
            batch_size: config.batch_size.max(1),
            max_in_flight: config.max_in_flight.max(1),
            ..config
        };
        ScorerGateway {
            backend,
            in_flight: Arc::new(Semaphore::new(config.max_in_flight)),
            config,
        }
    }

    /// One result per pair, in input order. A batch that keeps failing is
    /// retried pair by pair so a single bad pair does not sink its neighbours.
    pub async fn score_batch(&self, pairs: &[NliPair]) -> Vec<Result<EntailmentScore, ScoringUnavailable>> {
        let batches = pairs.chunks(self.config.batch_size).map(|chunk| self.score_chunk(chunk));
        join_all(batches).await.into_iter().flatten().collect()
    }

    async fn score_chunk(&self, chunk: &[NliPair]) -> Vec<Result<EntailmentScore, ScoringUnavailable>> {
        match self.request(chunk).await {
            Ok(outputs) => outputs.into_iter().map(convert).collect(),
            Err(e) if chunk.len() == 1 => vec![Err(ScoringUnavailable { reason: e.to_string() })],
            Err(e) => {
                log::warn!("batch of {} failed ({e}); scoring pairs individually", chunk.len());
                let singles = chunk.iter().map(|p| async move {
                    match self.request(std::slice::from_ref(p)).await {
                        Ok(mut out) => convert(out.remove(0)),
                        Err(e) => Err(ScoringUnavailable { reason: e.to_string() }),
                    }
                });
                join_all(singles).await
            }
        }
    }

    async fn request(&self, pairs: &[NliPair]) -> Result<Vec<BackendOutput>, BackendError> {
        let backend = &self.backend;
        let in_flight = &self.in_flight;
        retry_with_backoff(&self.config.retry, "NLI batch", move |_| async move {
            let _permit = in_flight.acquire().await.expect("semaphore never closed");
            let out = backend.score(pairs).await?;
            if out.len() != pairs.len() {
                return Err(BackendError::Malformed(format!(
                    "expected {} results, got {}",
                    pairs.len(),
                    out.len()
                )));
            }
            Ok(out)
        })
        .await
    }
}

fn convert(output: BackendOutput) -> Result<EntailmentScore, ScoringUnavailable> {
    output.to_score().map_err(|e| ScoringUnavailable { reason: e.to_string() })
}
