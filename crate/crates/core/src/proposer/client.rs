//! Chat-completion backends: HTTP, transcript replay, and a scripted mock.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::ChatMessage;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChatError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("empty response")]
    Empty,
    #[error("no recorded answer for this request")]
    NotRecorded,
}

/// Wire body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// Stable key for replay lookups: hash of model and messages.
    pub fn replay_key(&self) -> String {
        let body = serde_json::to_string(&(&self.model, &self.messages)).expect("serializable");
        hex(&Sha256::digest(body.as_bytes()))
    }
}

/// Which document and round a request belongs to. Not sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestContext {
    pub doc_title: String,
    pub round: usize,
}

#[async_trait]
pub trait ChatClient: Send + Sync {
    async fn complete(&self, request: &ChatRequest, ctx: &RequestContext) -> Result<String, ChatError>;
}

/// OpenAI-compatible `POST {endpoint}/chat/completions`.
pub struct HttpChatClient {
    http: reqwest::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, ChatError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let endpoint = endpoint.trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        Ok(HttpChatClient { http, url, api_key })
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Pulls the assistant text out of a chat-completions response body.
pub fn extract_completion_text(body: &str) -> Result<String, ChatError> {
    let parsed: CompletionResponse = serde_json::from_str(body).map_err(|e| ChatError::Malformed(e.to_string()))?;
    let text = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .unwrap_or_default();
    if text.trim().is_empty() {
        return Err(ChatError::Empty);
    }
    Ok(text)
}

#[async_trait]
impl ChatClient for HttpChatClient {
    async fn complete(&self, request: &ChatRequest, _ctx: &RequestContext) -> Result<String, ChatError> {
        let mut req = self.http.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| ChatError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Status {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        extract_completion_text(&body)
    }
}

/// One request/response pair of a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub round: usize,
    pub messages: Vec<ChatMessage>,
    pub response: String,
}

/// Everything sent to and received from the LLM for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub title: String,
    pub model: String,
    pub exchanges: Vec<Exchange>,
    #[serde(default)]
    pub failure: Option<String>,
}

/// Answers from stored transcripts instead of the network.
#[derive(Debug, Default)]
pub struct ReplayClient {
    answers: HashMap<String, String>,
}

impl ReplayClient {
    pub fn from_transcripts<'a>(transcripts: impl IntoIterator<Item = &'a Transcript>) -> Self {
        let mut answers = HashMap::new();
        for t in transcripts {
            for ex in &t.exchanges {
                let req = ChatRequest {
                    model: t.model.clone(),
                    temperature: 0.0,
                    messages: ex.messages.clone(),
                };
                answers.insert(req.replay_key(), ex.response.clone());
            }
        }
        ReplayClient { answers }
    }

    /// Loads every `*.json` transcript in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut transcripts = Vec::with_capacity(paths.len());
        for p in paths {
            let text = std::fs::read_to_string(&p)?;
            let t: Transcript = serde_json::from_str(&text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))?;
            transcripts.push(t);
        }
        Ok(Self::from_transcripts(&transcripts))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

#[async_trait]
impl ChatClient for ReplayClient {
    async fn complete(&self, request: &ChatRequest, _ctx: &RequestContext) -> Result<String, ChatError> {
        self.answers
            .get(&request.replay_key())
            .cloned()
            .ok_or(ChatError::NotRecorded)
    }
}

/// Canned answers per document title and round, for tests and dry runs.
///
/// The script file is a JSON object mapping each title to its list of
/// answers, one per round. Rounds past the end of a list get an empty answer.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    script: HashMap<String, Vec<String>>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(script: HashMap<String, Vec<String>>) -> Self {
        ScriptedClient {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let script = serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(script))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatClient for ScriptedClient {
    async fn complete(&self, _request: &ChatRequest, ctx: &RequestContext) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let answer = self
            .script
            .get(&ctx.doc_title)
            .and_then(|rounds| rounds.get(ctx.round))
            .cloned()
            .unwrap_or_default();
        if answer.trim().is_empty() {
            return Err(ChatError::Empty);
        }
        Ok(answer)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
