//! End-to-end runs: propose, align, then merge (train) or export for
//! verification (test).
//!
//! Documents are processed concurrently up to a configured bound, but every
//! output file is written afterwards in corpus order, so a replayed run
//! reproduces its outputs byte for byte. Wall-clock timings go to a separate
//! file for the same reason.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_document, AlignConfig, AlignError, AlignedTriple, Provenance};
use crate::corpus::{dataset_stats, load_corpus, Corpus, CorpusError, CorpusStats, GoldTriple};
use crate::proposer::{
    ChatClient, ConfigError, HttpChatClient, LlmConfig, ProposalTriple, Proposer, RejectedProposal, ReplayClient,
    ScriptedClient, SkippedLine, Transcript, DEFAULT_DEMONSTRATION,
};
use crate::registry::{load_registry, Registry, RegistryError};
use crate::scorer::{GatewayConfig, HttpNliBackend, LexicalBackend, NliBackend, ScorerGateway};
use crate::verification::{export_tasks, to_json_lines, VerificationError};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("aligned triple refers to unknown document `{0}`")]
    UnknownTitle(String),
    #[error("aligned triple ({h}, {t}, {r}) in `{title}` refers to a missing entity")]
    UnknownEntity { title: String, h: usize, t: usize, r: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Appends each aligned triple to its document with empty evidence, skipping
/// ones already present. Returns the new corpus and the number added.
pub fn merge_into_dataset(corpus: &Corpus, aligned: &[AlignedTriple]) -> Result<(Corpus, usize), MergeError> {
    let index = corpus.title_index()?;
    let mut merged = corpus.clone();
    let mut added = 0;
    for a in aligned {
        let &i = index
            .get(a.doc_title.as_str())
            .ok_or_else(|| MergeError::UnknownTitle(a.doc_title.clone()))?;
        let doc = &mut merged.documents[i];
        let n = doc.vertex_set.len();
        if a.h >= n || a.t >= n || a.h == a.t {
            return Err(MergeError::UnknownEntity {
                title: a.doc_title.clone(),
                h: a.h,
                t: a.t,
                r: a.r.clone(),
            });
        }
        if doc.has_label(a.h, a.t, &a.r) {
            continue;
        }
        doc.labels.push(GoldTriple::new(a.h, a.t, a.r.clone()));
        added += 1;
    }
    Ok((merged, added))
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("failed to read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<AlignError> for PipelineError {
    fn from(e: AlignError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Merge aligned triples directly as distant labels.
    #[default]
    Train,
    /// Export aligned triples as verification tasks.
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub path: PathBuf,
    /// Relation table; the built-in one when absent.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub type_constraints: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackendKind {
    #[default]
    Http,
    Replay,
    Scripted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmSection {
    #[serde(default)]
    pub backend: LlmBackendKind,
    /// Demonstration file; the built-in example when absent.
    #[serde(default)]
    pub demonstration: Option<PathBuf>,
    /// Directory of recorded transcripts, for `replay`.
    #[serde(default)]
    pub transcripts: Option<PathBuf>,
    /// Title → answers file, for `scripted`.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: LlmConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliBackendKind {
    #[default]
    Http,
    Lexical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliSection {
    #[serde(default)]
    pub backend: NliBackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_nli_timeout")]
    pub timeout_secs: u64,
    #[serde(flatten)]
    pub gateway: GatewayConfig,
}

fn default_nli_timeout() -> u64 {
    60
}

impl Default for NliSection {
    fn default() -> Self {
        NliSection {
            backend: NliBackendKind::default(),
            endpoint: None,
            timeout_secs: default_nli_timeout(),
            gateway: GatewayConfig::default(),
        }
    }
}

fn default_workers() -> usize {
    4
}

/// A run configuration, usually read from TOML. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    pub output_dir: PathBuf,
    /// Merge test-mode candidates without verification. The manifest is marked.
    #[serde(default)]
    pub force_distant: bool,
    #[serde(default = "default_workers")]
    pub max_concurrent_documents: usize,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub nli: NliSection,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.base_dir = base_dir.into();
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.llm.settings.validate()?;
        self.align.validate()?;
        if self.max_concurrent_documents == 0 {
            return Err(PipelineError::Config("max_concurrent_documents must be at least 1".into()));
        }
        match self.llm.backend {
            LlmBackendKind::Replay if self.llm.transcripts.is_none() => {
                return Err(PipelineError::Config("llm.backend = \"replay\" needs llm.transcripts".into()))
            }
            LlmBackendKind::Scripted if self.llm.script.is_none() => {
                return Err(PipelineError::Config("llm.backend = \"scripted\" needs llm.script".into()))
            }
            _ => {}
        }
        if self.nli.backend == NliBackendKind::Http && self.nli.endpoint.is_none() {
            return Err(PipelineError::Config("nli.backend = \"http\" needs nli.endpoint".into()));
        }
        Ok(())
    }

    pub fn load_registry(&self) -> Result<Registry, PipelineError> {
        let registry = match &self.corpus.registry {
            Some(p) => load_registry(self.resolve(p))?,
            None => Registry::builtin(),
        };
        Ok(match &self.corpus.type_constraints {
            Some(p) => registry.with_constraints_file(self.resolve(p))?,
            None => registry,
        })
    }

    pub fn demonstration(&self) -> Result<String, PipelineError> {
        match &self.llm.demonstration {
            Some(p) => {
                let p = self.resolve(p);
                std::fs::read_to_string(&p).map_err(|source| PipelineError::ConfigRead { path: p, source })
            }
            None => Ok(DEFAULT_DEMONSTRATION.to_string()),
        }
    }

    /// Chat client as configured. The HTTP client reads its key from the environment.
    pub fn chat_client(&self) -> Result<Arc<dyn ChatClient>, PipelineError> {
        let config_err = |p: &Path, e: std::io::Error| PipelineError::Config(format!("{}: {e}", p.display()));
        Ok(match self.llm.backend {
            LlmBackendKind::Http => {
                let key = std::env::var(&self.llm.settings.api_key_env).ok();
                let client = HttpChatClient::new(&self.llm.settings.endpoint, key, self.llm.settings.timeout())
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                Arc::new(client)
            }
            LlmBackendKind::Replay => {
                let dir = self.resolve(self.llm.transcripts.as_deref().expect("validated"));
                Arc::new(ReplayClient::from_dir(&dir).map_err(|e| config_err(&dir, e))?)
            }
            LlmBackendKind::Scripted => {
                let file = self.resolve(self.llm.script.as_deref().expect("validated"));
                Arc::new(ScriptedClient::from_file(&file).map_err(|e| config_err(&file, e))?)
            }
        })
    }

    pub fn nli_backend(&self) -> Result<Arc<dyn NliBackend>, PipelineError> {
        Ok(match self.nli.backend {
            NliBackendKind::Lexical => Arc::new(LexicalBackend),
            NliBackendKind::Http => {
                let endpoint = self.nli.endpoint.as_deref().expect("validated");
                let backend = HttpNliBackend::new(endpoint, std::time::Duration::from_secs(self.nli.timeout_secs))
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                Arc::new(backend)
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub title: String,
    pub proposals: usize,
    pub skipped_lines: usize,
    pub rejected: usize,
    pub aligned: usize,
    pub direct: usize,
    pub nli: usize,
    pub below_threshold: usize,
    pub already_labeled: usize,
    pub unscored: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_failure: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub documents: usize,
    pub proposals: usize,
    pub skipped_lines: usize,
    pub rejected: usize,
    pub aligned: usize,
    pub direct: usize,
    pub nli: usize,
    pub below_threshold: usize,
    pub already_labeled: usize,
    pub unscored: usize,
    pub llm_failures: usize,
}

impl RunTotals {
    pub fn sum(reports: &[DocumentReport]) -> Self {
        let mut t = RunTotals {
            documents: reports.len(),
            ..RunTotals::default()
        };
        for r in reports {
            t.proposals += r.proposals;
            t.skipped_lines += r.skipped_lines;
            t.rejected += r.rejected;
            t.aligned += r.aligned;
            t.direct += r.direct;
            t.nli += r.nli;
            t.below_threshold += r.below_threshold;
            t.already_labeled += r.already_labeled;
            t.unscored += r.unscored;
            t.llm_failures += usize::from(r.llm_failure.is_some());
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub documents: Vec<DocumentReport>,
    pub totals: RunTotals,
    /// Statistics of the input corpus.
    pub input: CorpusStats,
    /// Statistics of the emitted dataset; absent when tasks were exported instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<CorpusStats>,
    /// Triples actually added to the emitted dataset.
    pub added: usize,
    /// Verification tasks written in test mode.
    pub tasks: usize,
    /// Set when test-mode candidates were merged without verification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watermark: Option<String>,
    /// Output file names, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// True when some backend gave up and the run is therefore incomplete.
    pub fn has_backend_failures(&self) -> bool {
        self.totals.llm_failures > 0 || self.totals.unscored > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: u128,
    pub documents: Vec<(String, u128)>,
}

pub const FORCE_DISTANT_WATERMARK: &str = "test-mode candidates merged without human verification";

/// Everything a run produced for one document, before it hits disk.
#[derive(Debug, Clone)]
pub struct DocumentResult {
    pub report: DocumentReport,
    pub proposals: Vec<ProposalTriple>,
    pub skipped: Vec<(usize, SkippedLine)>,
    pub rejected: Vec<RejectedProposal>,
    pub aligned: Vec<AlignedTriple>,
    pub unscored: Vec<(ProposalTriple, String)>,
    pub transcript: Transcript,
    pub elapsed_ms: u128,
}

/// Propose and align over a whole corpus with injected backends.
pub struct Pipeline {
    registry: Registry,
    proposer: Proposer,
    gateway: ScorerGateway,
    align: AlignConfig,
    workers: usize,
}

impl Pipeline {
    pub fn new(
        config: &RunConfig,
        registry: Registry,
        chat: Arc<dyn ChatClient>,
        nli: Arc<dyn NliBackend>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let proposer = Proposer::new(config.llm.settings.clone(), config.demonstration()?, chat)?;
        Ok(Pipeline {
            registry,
            proposer,
            gateway: ScorerGateway::new(nli, config.nli.gateway),
            align: config.align,
            workers: config.max_concurrent_documents,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub async fn process(&self, doc: &crate::corpus::Document) -> DocumentResult {
        let started = Instant::now();
        let outcome = self.proposer.propose(doc).await;
        let alignment = align_document(&outcome.proposals, doc, &self.registry, &self.gateway, &self.align).await;
        let count = |p: Provenance| alignment.triples.iter().filter(|t| t.provenance == p).count();
        let report = DocumentReport {
            title: doc.title.clone(),
            proposals: outcome.proposals.len(),
            skipped_lines: outcome.skipped_lines.len(),
            rejected: outcome.rejected.len(),
            aligned: alignment.triples.len(),
            direct: count(Provenance::Direct),
            nli: count(Provenance::Nli),
            below_threshold: alignment.below_threshold,
            already_labeled: alignment.already_labeled,
            unscored: alignment.unscored.len(),
            llm_failure: outcome.failure.clone(),
        };
        DocumentResult {
            report,
            proposals: outcome.proposals,
            skipped: outcome.skipped_lines,
            rejected: outcome.rejected,
            aligned: alignment.triples,
            unscored: alignment.unscored,
            transcript: outcome.transcript,
            elapsed_ms: started.elapsed().as_millis(),
        }
    }

    /// Results in corpus order; at most `max_concurrent_documents` in progress.
    pub async fn process_corpus(&self, corpus: &Corpus) -> Vec<DocumentResult> {
        stream::iter(corpus.documents.iter())
            .map(|doc| self.process(doc))
            .buffered(self.workers)
            .collect()
            .await
    }
}

/// Runs the configured pipeline and writes every output file.
pub async fn run_pipeline(config: &RunConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let registry = config.load_registry()?;
    let corpus = load_corpus(config.resolve(&config.corpus.path), &registry)?;
    corpus.title_index()?;
    let chat = config.chat_client()?;
    let nli = config.nli_backend()?;
    let pipeline = Pipeline::new(config, registry, chat, nli)?;
    run_with(config, &pipeline, &corpus).await
}

/// Runs an already-built pipeline over `corpus` and writes the outputs.
pub async fn run_with(config: &RunConfig, pipeline: &Pipeline, corpus: &Corpus) -> Result<RunManifest, PipelineError> {
    let started = Instant::now();
    let results = pipeline.process_corpus(corpus).await;
    let out_dir = config.resolve(&config.output_dir);
    let transcript_dir = out_dir.join("transcripts");
    create_dir(&transcript_dir)?;

    let mut outputs = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<(), PipelineError> {
        write(&out_dir.join(name), contents)?;
        outputs.push(name.to_string());
        Ok(())
    };

    for (i, r) in results.iter().enumerate() {
        let body = serde_json::to_string_pretty(&r.transcript).expect("serializable");
        write(&transcript_dir.join(format!("{i:05}.json")), body)?;
    }

    let proposals: Vec<&ProposalTriple> = results.iter().flat_map(|r| &r.proposals).collect();
    emit("proposals.jsonl", to_json_lines(&proposals))?;
    let skipped: Vec<SkipRecord> = results.iter().flat_map(skip_report).collect();
    emit("skipped.jsonl", to_json_lines(&skipped))?;
    let candidates: Vec<AlignedTriple> = results.iter().flat_map(|r| r.aligned.iter().cloned()).collect();
    emit("candidates.jsonl", to_json_lines(&candidates))?;
    let unscored: Vec<UnscoredRecord> = results
        .iter()
        .flat_map(|r| {
            r.unscored.iter().map(|(p, reason)| UnscoredRecord {
                proposal: p,
                reason,
            })
        })
        .collect();
    emit("unscored.jsonl", to_json_lines(&unscored))?;
    let failures: Vec<FailureRecord> = results
        .iter()
        .filter_map(|r| {
            r.report.llm_failure.as_deref().map(|e| FailureRecord {
                title: &r.report.title,
                stage: "llm",
                error: e,
            })
        })
        .collect();
    emit("failures.jsonl", to_json_lines(&failures))?;

    let merge = config.mode == Mode::Train || config.force_distant;
    let (output, added, tasks) = if merge {
        let (merged, added) = merge_into_dataset(corpus, &candidates)?;
        emit("dataset.json", merged.to_json())?;
        (Some(dataset_stats(&merged)), added, 0)
    } else {
        let tasks = export_tasks(&candidates, corpus, pipeline.registry())?;
        emit("tasks.jsonl", to_json_lines(&tasks))?;
        (None, 0, tasks.len())
    };

    let documents: Vec<DocumentReport> = results.iter().map(|r| r.report.clone()).collect();
    outputs.push("manifest.json".into());
    outputs.push("timings.json".into());
    let manifest = RunManifest {
        config: config.clone(),
        totals: RunTotals::sum(&documents),
        documents,
        input: dataset_stats(corpus),
        output,
        added,
        tasks,
        watermark: (config.mode == Mode::Test && config.force_distant).then(|| FORCE_DISTANT_WATERMARK.to_string()),
        outputs,
    };
    write(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )?;
    let timings = Timings {
        total_ms: started.elapsed().as_millis(),
        documents: results.iter().map(|r| (r.report.title.clone(), r.elapsed_ms)).collect(),
    };
    write(
        &out_dir.join("timings.json"),
        serde_json::to_string_pretty(&timings).expect("serializable"),
    )?;
    Ok(manifest)
}

/// One line of the skip report: a response line that was not a triple, or
/// a parsed triple dropped during entity linking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub title: String,
    pub round: usize,
    pub line_index: usize,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalTriple>,
}

fn reason_name<T: Serialize>(reason: &T) -> String {
    serde_json::to_value(reason)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

/// Parse skips followed by linking rejections, each in response order.
pub fn skip_report(result: &DocumentResult) -> Vec<SkipRecord> {
    let title = &result.report.title;
    let mut out: Vec<SkipRecord> = result
        .skipped
        .iter()
        .map(|(round, s)| SkipRecord {
            title: title.clone(),
            round: *round,
            line_index: s.line_index,
            reason: reason_name(&s.reason),
            text: Some(s.text.clone()),
            proposal: None,
        })
        .collect();
    out.extend(result.rejected.iter().map(|r| SkipRecord {
        title: title.clone(),
        round: r.proposal.round,
        line_index: r.proposal.line_index,
        reason: reason_name(&r.reason),
        text: None,
        proposal: Some(r.proposal.clone()),
    }));
    out
}

#[derive(Serialize)]
struct UnscoredRecord<'a> {
    #[serde(flatten)]
    proposal: &'a ProposalTriple,
    reason: &'a str,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    title: &'a str,
    stage: &'a str,
    error: &'a str,
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(|source| PipelineError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: String) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(|source| PipelineError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Titles shared by the two corpora. Handy for sanity checks before a merge.
pub fn shared_titles(a: &Corpus, b: &Corpus) -> BTreeSet<String> {
    let left: BTreeSet<&str> = a.documents.iter().map(|d| d.title.as_str()).collect();
    b.documents
        .iter()
        .map(|d| d.title.as_str())
        .filter(|t| left.contains(t))
        .map(String::from)
        .collect()
}
