use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use docaug::align::{align_document, AlignedTriple};
use docaug::corpus::{dataset_stats, diff_triples, load_corpus, Corpus, CorpusError};
use docaug::evaluate::{evaluate, format_percent, read_predictions, recall_on_subset, render_table, EvalError};
use docaug::pipeline::{merge_into_dataset, run_pipeline, PipelineError, RunConfig};
use docaug::proposer::{ProposalTriple, Proposer};
use docaug::registry::{derive_type_constraints, load_registry, Registry, RegistryError};
use docaug::scorer::ScorerGateway;
use docaug::service::{serve, AppState, Roster};
use docaug::store::Store;
use docaug::verification::{
    acceptance_by_provenance, adjudicate, apply_verification, export_tasks, read_decisions, read_tasks, to_json_lines,
    write_json_lines, VerificationError,
};

#[derive(Parser)]
#[command(name = "docaug", version, about = "Augment DocRED-format datasets with LLM-proposed, NLI-aligned triples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ask the LLM for triples and link them to each document's entities.
    Propose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Map proposals onto registry relations.
    Align {
        #[arg(long)]
        config: PathBuf,
        /// Proposals file written by `propose`.
        #[arg(long)]
        proposals: PathBuf,
    },
    /// Add candidate triples to a corpus as distant labels.
    Merge {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Propose, align and merge or export in one go.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Corpus statistics.
    Stats {
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Print JSON instead of a summary.
        #[arg(long)]
        json: bool,
        /// Also write the entity types seen per relation as a constraint file.
        #[arg(long)]
        derive_constraints: Option<PathBuf>,
    },
    /// Triples present in `superset` but not in `base`.
    Diff {
        #[arg(long)]
        superset: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Write the triples as JSON Lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact-match precision, recall and F1.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Also report recall on the triples this corpus adds over `--gold`.
        #[arg(long)]
        subset_superset: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Turn candidates into verification tasks.
    ExportVerify {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Load tasks and externally collected decisions into a store.
    ImportVerify {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Resolve decisions and optionally apply them to a corpus.
    Adjudicate {
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Corpus to add accepted triples to; needs `--tasks` and `--out`.
        #[arg(long, requires_all = ["tasks", "out"])]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Serve verification tasks over HTTP.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        roster: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Tasks to add to the store before serving.
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Backend(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::ConfigRead { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    CorpusError,
    RegistryError,
    EvalError,
    VerificationError,
    docaug::pipeline::MergeError,
    docaug::store::StoreError,
    docaug::service::RosterError
);

type Outcome = Result<(), Failure>;

fn registry(path: Option<&Path>) -> Result<Registry, Failure> {
    Ok(match path {
        Some(p) => load_registry(p)?,
        None => Registry::builtin(),
    })
}

fn write_file(path: &Path, contents: String) -> Outcome {
    std::fs::write(path, contents).map_err(|e| Failure::Data(format!("failed to write {}: {e}", path.display())))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("failed to read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Failure::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn load_run_inputs(config: &Path) -> Result<(RunConfig, Registry, Corpus), Failure> {
    let config = RunConfig::load(config)?;
    config.validate()?;
    let registry = config.load_registry()?;
    let corpus = load_corpus(config.resolve(&config.corpus.path), &registry)?;
    corpus.title_index()?;
    Ok((config, registry, corpus))
}

fn output_dir(config: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = config.resolve(&config.output_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Data(format!("failed to create {}: {e}", dir.display())))?;
    Ok(dir)
}

async fn propose(config: &Path) -> Outcome {
    let (config, _, corpus) = load_run_inputs(config)?;
    let proposer = Proposer::new(config.llm.settings.clone(), config.demonstration()?, config.chat_client()?)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let dir = output_dir(&config)?;
    let mut proposals = Vec::new();
    let mut transcripts = Vec::new();
    let mut failures = 0;
    for doc in &corpus.documents {
        let outcome = proposer.propose(doc).await;
        failures += usize::from(outcome.failure.is_some());
        proposals.extend(outcome.proposals);
        transcripts.push(outcome.transcript);
    }
    write_file(&dir.join("proposals.jsonl"), to_json_lines(&proposals))?;
    write_file(&dir.join("transcripts.jsonl"), to_json_lines(&transcripts))?;
    println!("{} proposals from {} documents", proposals.len(), corpus.len());
    if failures > 0 {
        return Err(Failure::Backend(format!("LLM gave up on {failures} document(s)")));
    }
    Ok(())
}

async fn align(config: &Path, proposals: &Path) -> Outcome {
    let (config, registry, corpus) = load_run_inputs(config)?;
    let proposals: Vec<ProposalTriple> = read_jsonl(proposals)?;
    let mut by_title: BTreeMap<&str, Vec<ProposalTriple>> = BTreeMap::new();
    for p in &proposals {
        if p.linked().is_none() {
            return Err(Failure::Data(format!("proposal on line {} of `{}` is not linked", p.line_index, p.doc_title)));
        }
        by_title.entry(p.doc_title.as_str()).or_default().push(p.clone());
    }
    let gateway = ScorerGateway::new(config.nli_backend()?, config.nli.gateway);
    let mut candidates: Vec<AlignedTriple> = Vec::new();
    let mut unscored = 0;
    for doc in &corpus.documents {
        let Some(ps) = by_title.remove(doc.title.as_str()) else {
            continue;
        };
        let a = align_document(&ps, doc, &registry, &gateway, &config.align).await;
        unscored += a.unscored.len();
        candidates.extend(a.triples);
    }
    if let Some(title) = by_title.keys().next() {
        return Err(Failure::Data(format!("proposals refer to unknown document `{title}`")));
    }
    let dir = output_dir(&config)?;
    write_file(&dir.join("candidates.jsonl"), to_json_lines(&candidates))?;
    println!("{} candidates", candidates.len());
    if unscored > 0 {
        return Err(Failure::Backend(format!("{unscored} proposal(s) could not be scored")));
    }
    Ok(())
}

async fn run(config: &Path) -> Outcome {
    let config = RunConfig::load(config)?;
    let manifest = run_pipeline(&config).await?;
    let t = &manifest.totals;
    println!(
        "{} documents, {} proposals, {} aligned ({} direct, {} nli), {} added, {} tasks",
        t.documents, t.proposals, t.aligned, t.direct, t.nli, manifest.added, manifest.tasks
    );
    if let Some(w) = &manifest.watermark {
        println!("note: {w}");
    }
    if manifest.has_backend_failures() {
        return Err(Failure::Backend(format!(
            "{} LLM failure(s), {} unscored proposal(s); see failures.jsonl and unscored.jsonl",
            t.llm_failures, t.unscored
        )));
    }
    Ok(())
}

fn merge(corpus: &Path, candidates: &Path, out: &Path, reg: Option<&Path>) -> Outcome {
    let corpus = load_corpus(corpus, &registry(reg)?)?;
    let candidates: Vec<AlignedTriple> = read_jsonl(candidates)?;
    let (merged, added) = merge_into_dataset(&corpus, &candidates)?;
    merged.write(out)?;
    println!("added {added} of {} candidates", candidates.len());
    Ok(())
}

fn stats(paths: &[PathBuf], reg: Option<&Path>, json: bool, derive: Option<&Path>) -> Outcome {
    let registry = registry(reg)?;
    let mut total: Option<docaug::corpus::CorpusStats> = None;
    let mut all = Vec::new();
    for p in paths {
        let corpus = load_corpus(p, &registry)?;
        let s = dataset_stats(&corpus);
        if !json {
            println!("{}: {} documents, {} entities, {} triples", p.display(), s.doc_count, s.entity_count, s.triple_count);
        }
        total = Some(match total {
            Some(t) => t.combine(&s),
            None => s.clone(),
        });
        all.extend(corpus.documents);
    }
    let total = total.expect("clap requires at least one corpus");
    if json {
        println!("{}", serde_json::to_string_pretty(&total).expect("serializable"));
    } else if paths.len() > 1 {
        println!("total: {} documents, {} entities, {} triples", total.doc_count, total.entity_count, total.triple_count);
    }
    if let Some(out) = derive {
        let entries = derive_type_constraints(&Corpus::new(all));
        write_file(out, serde_json::to_string_pretty(&entries).expect("serializable"))?;
    }
    Ok(())
}

fn diff(superset: &Path, base: &Path, reg: Option<&Path>, out: Option<&Path>) -> Outcome {
    let registry = registry(reg)?;
    let added = diff_triples(&load_corpus(superset, &registry)?, &load_corpus(base, &registry)?)?;
    println!("{} triples", added.len());
    if let Some(out) = out {
        let lines: Vec<serde_json::Value> = added
            .iter()
            .map(|(title, g)| serde_json::json!({"title": title, "h": g.h, "t": g.t, "r": g.r, "evidence": g.evidence}))
            .collect();
        write_file(out, to_json_lines(&lines))?;
    }
    Ok(())
}

fn eval(gold: &Path, predictions: &Path, superset: Option<&Path>, reg: Option<&Path>, json: Option<&Path>) -> Outcome {
    let registry = registry(reg)?;
    let gold = load_corpus(gold, &registry)?;
    let predictions = read_predictions(predictions)?;
    let mut report = evaluate(&predictions, &gold)?;
    if let Some(sup) = superset {
        let added = diff_triples(&load_corpus(sup, &registry)?, &gold)?;
        let subset = added
            .into_iter()
            .map(|(title, g)| docaug::corpus::TripleKey::new(title, g.h, g.t, g.r))
            .collect();
        report.subset_recalls.insert("added".into(), recall_on_subset(&predictions, &subset)?);
    }
    print!("{}", render_table(&report));
    if let Some(out) = json {
        write_file(out, serde_json::to_string_pretty(&report).expect("serializable"))?;
    }
    Ok(())
}

fn export_verify(corpus: &Path, candidates: &Path, out: &Path, reg: Option<&Path>) -> Outcome {
    let registry = registry(reg)?;
    let corpus = load_corpus(corpus, &registry)?;
    let candidates: Vec<AlignedTriple> = read_jsonl(candidates)?;
    let tasks = export_tasks(&candidates, &corpus, &registry)?;
    write_json_lines(out, &tasks)?;
    println!("{} tasks", tasks.len());
    Ok(())
}

fn import_verify(store: &Path, tasks: Option<&Path>, decisions: Option<&Path>) -> Outcome {
    let mut store = Store::open(store)?;
    if let Some(t) = tasks {
        println!("{} new tasks", store.add_tasks(read_tasks(t)?)?);
    }
    if let Some(d) = decisions {
        let mut imported = 0;
        for decision in read_decisions(d)? {
            store.append_decision(decision)?;
            imported += 1;
        }
        println!("{imported} decisions");
    }
    Ok(())
}

fn adjudicate_cmd(decisions: &Path, tasks: Option<&Path>, corpus: Option<&Path>, out: Option<&Path>, reg: Option<&Path>) -> Outcome {
    let report = adjudicate(&read_decisions(decisions)?)?;
    println!(
        "{} resolved ({} unanimous, {} adjudicated), {} conflicted, {} open",
        report.outcomes.len(),
        report.unanimous,
        report.adjudicated,
        report.conflicted.len(),
        report.open.len()
    );
    match report.acceptance_rate() {
        Some(r) => println!("acceptance rate: {}%", format_percent(100.0 * r)),
        None => println!("acceptance rate: n/a"),
    }
    let Some(tasks) = tasks else {
        return Ok(());
    };
    let tasks = read_tasks(tasks)?;
    for (provenance, r) in acceptance_by_provenance(&report, &tasks) {
        let rate = r.rate.map_or("n/a".to_string(), |x| format!("{}%", format_percent(100.0 * x)));
        println!("  {provenance:?}: {} of {} accepted ({rate})", r.accepted, r.resolved);
    }
    if let (Some(corpus), Some(out)) = (corpus, out) {
        let corpus = load_corpus(corpus, &registry(reg)?)?;
        let (verified, applied) = apply_verification(&corpus, &report.outcomes, &tasks)?;
        verified.write(out)?;
        println!("added {} triples ({} accepted, {} already present)", applied.added, applied.accepted, applied.duplicates);
    }
    Ok(())
}

async fn serve_cmd(store: &Path, roster: &Path, bind: SocketAddr, tasks: Option<&Path>) -> Outcome {
    let mut store = Store::open(store)?;
    if let Some(t) = tasks {
        store.add_tasks(read_tasks(t)?)?;
    }
    let state = AppState::new(store, Roster::load(roster)?);
    serve(bind, state)
        .await
        .map_err(|e| Failure::Usage(format!("cannot serve on {bind}: {e}")))
}

async fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Propose { config } => propose(&config).await,
        Command::Align { config, proposals } => align(&config, &proposals).await,
        Command::Merge {
            corpus,
            candidates,
            out,
            registry,
        } => merge(&corpus, &candidates, &out, registry.as_deref()),
        Command::Run { config } => run(&config).await,
        Command::Stats {
            corpus,
            registry,
            json,
            derive_constraints,
        } => stats(&corpus, registry.as_deref(), json, derive_constraints.as_deref()),
        Command::Diff {
            superset,
            base,
            registry,
            out,
        } => diff(&superset, &base, registry.as_deref(), out.as_deref()),
        Command::Eval {
            gold,
            predictions,
            subset_superset,
            registry,
            json,
        } => eval(&gold, &predictions, subset_superset.as_deref(), registry.as_deref(), json.as_deref()),
        Command::ExportVerify {
            corpus,
            candidates,
            out,
            registry,
        } => export_verify(&corpus, &candidates, &out, registry.as_deref()),
        Command::ImportVerify { store, tasks, decisions } => import_verify(&store, tasks.as_deref(), decisions.as_deref()),
        Command::Adjudicate {
            decisions,
            tasks,
            corpus,
            out,
            registry,
        } => adjudicate_cmd(&decisions, tasks.as_deref(), corpus.as_deref(), out.as_deref(), registry.as_deref()),
        Command::Serve {
            store,
            roster,
            bind,
            tasks,
        } => serve_cmd(&store, &roster, bind, tasks.as_deref()).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
