//! Eliciting free-form relation triples from a chat LLM.
//!
//! A document is turned into an initial prompt (demonstration, context,
//! entity list). Each further round feeds the previous answer back with a
//! request for more triples. Every answer is parsed line by line, and the
//! resulting proposals are linked to the document's entities; proposals that
//! name anything outside the entity list are dropped.

mod client;
mod parse;
mod prompt;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::corpus::{entity_surface_index, normalize_surface, Document};
use crate::registry::normalize_relation_name;
use crate::retry::{retry_with_backoff, RetryPolicy};

pub use client::{
    extract_completion_text, ChatClient, ChatError, ChatRequest, Exchange, HttpChatClient, ReplayClient,
    RequestContext, ScriptedClient, Transcript,
};
pub(crate) use client::hex;
pub use parse::{parse_triples, ParsedResponse, RawTriple, SkipReason, SkippedLine};
pub use prompt::{
    build_continuation_prompt, build_initial_prompt, build_initial_prompt_truncated, ChatMessage, PromptBundle,
    PromptError, Role, CONTINUATION_INSTRUCTION, DEFAULT_DEMONSTRATION,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalTriple {
    pub doc_title: String,
    pub round: usize,
    pub line_index: usize,
    pub subject_surface: String,
    pub relation_phrase: String,
    pub object_surface: String,
    #[serde(default)]
    pub subject_idx: Option<usize>,
    #[serde(default)]
    pub object_idx: Option<usize>,
}

impl ProposalTriple {
    pub fn new(
        doc_title: impl Into<String>,
        round: usize,
        line_index: usize,
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        ProposalTriple {
            doc_title: doc_title.into(),
            round,
            line_index,
            subject_surface: subject.into(),
            relation_phrase: relation.into(),
            object_surface: object.into(),
            subject_idx: None,
            object_idx: None,
        }
    }

    pub fn from_raw(raw: &RawTriple, doc_title: &str, round: usize) -> Self {
        Self::new(doc_title, round, raw.line_index, &raw.subject, &raw.relation, &raw.object)
    }

    /// `(subject, object)` entity indices once linked.
    pub fn linked(&self) -> Option<(usize, usize)> {
        self.subject_idx.zip(self.object_idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyRelation,
    SubjectNotInEntityList,
    ObjectNotInEntityList,
    SelfRelation,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedProposal {
    pub proposal: ProposalTriple,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkOutcome {
    pub linked: Vec<ProposalTriple>,
    pub rejected: Vec<RejectedProposal>,
}

/// Resolves both surfaces against the document's entity list and drops
/// everything that cannot be linked, self-relations, and repeats of an
/// earlier `(subject, relation phrase, object)`.
pub fn link_and_filter(proposals: Vec<ProposalTriple>, doc: &Document) -> LinkOutcome {
    let index = entity_surface_index(doc);
    let mut seen = BTreeSet::new();
    let mut out = LinkOutcome::default();
    for mut p in proposals {
        let reject = |p: ProposalTriple, reason| RejectedProposal { proposal: p, reason };
        if p.relation_phrase.trim().is_empty() {
            out.rejected.push(reject(p, RejectReason::EmptyRelation));
            continue;
        }
        let Some(&s) = index.get(&normalize_surface(&p.subject_surface)) else {
            out.rejected.push(reject(p, RejectReason::SubjectNotInEntityList));
            continue;
        };
        let Some(&o) = index.get(&normalize_surface(&p.object_surface)) else {
            out.rejected.push(reject(p, RejectReason::ObjectNotInEntityList));
            continue;
        };
        p.subject_idx = Some(s);
        p.object_idx = Some(o);
        if s == o {
            out.rejected.push(reject(p, RejectReason::SelfRelation));
            continue;
        }
        if !seen.insert((s, normalize_relation_name(&p.relation_phrase), o)) {
            out.rejected.push(reject(p, RejectReason::Duplicate));
            continue;
        }
        out.linked.push(p);
    }
    out
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("temperature must be finite and non-negative, got {0}")]
    Temperature(f64),
    #[error("max_in_flight must be at least 1")]
    InFlight,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Continuation rounds after the initial prompt.
    pub rounds: usize,
    pub timeout_secs: u64,
    #[serde(flatten)]
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub max_document_tokens: Option<usize>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            rounds: 0,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            api_key_env: "OPENAI_API_KEY".into(),
            max_document_tokens: None,
        }
    }
}

impl LlmConfig {
    /// Initial prompt only.
    pub fn single_round() -> Self {
        Self::default()
    }

    /// Initial prompt plus two continuation rounds.
    pub fn more_rounds() -> Self {
        LlmConfig {
            rounds: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ConfigError::Temperature(self.temperature));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::InFlight);
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// Result of proposing for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeOutcome {
    pub title: String,
    /// Linked proposals ordered by `(round, line_index)`.
    pub proposals: Vec<ProposalTriple>,
    /// Response lines that were not triples, tagged with their round.
    pub skipped_lines: Vec<(usize, SkippedLine)>,
    pub rejected: Vec<RejectedProposal>,
    pub transcript: Transcript,
    /// Set when the endpoint gave up; the document then has no proposals.
    pub failure: Option<String>,
}

pub struct Proposer {
    config: LlmConfig,
    demonstration: String,
    client: Arc<dyn ChatClient>,
    in_flight: Arc<Semaphore>,
}

impl Proposer {
    pub fn new(config: LlmConfig, demonstration: impl Into<String>, client: Arc<dyn ChatClient>) -> Result<Self, ConfigError> {
        config.validate()?;
        let demonstration = demonstration.into();
        if demonstration.trim().is_empty() {
            return Err(PromptError::EmptyDemonstration.into());
        }
        let in_flight = Arc::new(Semaphore::new(config.max_in_flight));
        Ok(Proposer {
            config,
            demonstration,
            client,
            in_flight,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Runs the initial round and `rounds` continuations, serially, then links and filters.
    pub async fn propose(&self, doc: &Document) -> ProposeOutcome {
        let mut transcript = Transcript {
            title: doc.title.clone(),
            model: self.config.model.clone(),
            exchanges: Vec::new(),
            failure: None,
        };
        let mut raw = Vec::new();
        let mut skipped_lines = Vec::new();
        let mut bundle =
            build_initial_prompt_truncated(doc, &self.demonstration, self.config.max_document_tokens)
                .expect("demonstration checked at construction");

        for round in 0..=self.config.rounds {
            let request = ChatRequest {
                model: self.config.model.clone(),
                temperature: self.config.temperature,
                messages: bundle.messages(),
            };
            let ctx = RequestContext {
                doc_title: doc.title.clone(),
                round,
            };
            let what = format!("LLM `{}` round {round}", doc.title);
            let (client, in_flight, req, c) = (&self.client, &self.in_flight, &request, &ctx);
            let answer = retry_with_backoff(&self.config.retry, &what, move |_| async move {
                let _permit = in_flight.acquire().await.expect("semaphore never closed");
                match client.complete(req, c).await {
                    Ok(text) if text.trim().is_empty() => Err(ChatError::Empty),
                    other => other,
                }
            })
            .await;
            let answer = match answer {
                Ok(a) => a,
                Err(e) => {
                    log::error!("document `{}`: giving up in round {round}: {e}", doc.title);
                    transcript.failure = Some(format!("round {round}: {e}"));
                    break;
                }
            };
            transcript.exchanges.push(Exchange {
                round,
                messages: request.messages,
                response: answer.clone(),
            });
            let parsed = parse_triples(&answer);
            raw.extend(parsed.triples.iter().map(|t| ProposalTriple::from_raw(t, &doc.title, round)));
            skipped_lines.extend(parsed.skipped.into_iter().map(|s| (round, s)));
            if round < self.config.rounds {
                bundle = build_continuation_prompt(&bundle, &answer).expect("answer is non-empty");
            }
        }

        if transcript.failure.is_some() {
            return ProposeOutcome {
                title: doc.title.clone(),
                proposals: Vec::new(),
                skipped_lines,
                rejected: Vec::new(),
                failure: transcript.failure.clone(),
                transcript,
            };
        }
        let LinkOutcome { linked, rejected } = link_and_filter(raw, doc);
        ProposeOutcome {
            title: doc.title.clone(),
            proposals: linked,
            skipped_lines,
            rejected,
            failure: None,
            transcript,
        }
    }
}
