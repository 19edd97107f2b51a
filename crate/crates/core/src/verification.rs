//! Human verification of candidate triples.
//!
//! Each candidate becomes a task. Two annotators judge it; when they agree
//! their verdict is final, and when they disagree a third judgement breaks
//! the tie. That third judgement is the first one from an adjudicator, or,
//! when no adjudicator has ruled, a third annotator's.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{AlignedTriple, Provenance};
use crate::corpus::{Corpus, CorpusError, Document};
use crate::pipeline::{merge_into_dataset, MergeError};
use crate::registry::{verbalize_hypothesis, Registry};

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error("candidate refers to unknown document `{0}`")]
    UnknownTitle(String),
    #[error("candidate ({h}, {t}) in `{title}` refers to a missing entity")]
    UnknownEntity { title: String, h: usize, t: usize },
    #[error("candidate in `{title}` uses unknown relation {r}")]
    UnknownRelation { title: String, r: String },
    #[error("annotator `{annotator_id}` decided task {task_id} more than once")]
    DuplicateDecision { task_id: String, annotator_id: String },
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Merge(#[from] MergeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
    /// Declined to judge. Never counts towards adjudication.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Annotator,
    Adjudicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Open,
    Conflicted,
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionPath {
    Unanimous,
    Adjudicated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HighlightRole {
    Subject,
    Object,
}

/// A mention span inside one paragraph, in characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub paragraph: usize,
    pub start: usize,
    pub end: usize,
    pub role: HighlightRole,
}

/// Pre-segmented document for display: one paragraph per sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayDocument {
    pub paragraphs: Vec<String>,
    pub highlights: Vec<Highlight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub h: usize,
    pub t: usize,
    pub subject_name: String,
    pub object_name: String,
    pub relation_id: String,
    pub relation_name: String,
    /// The relation template filled with both names.
    pub statement: String,
    pub provenance: Provenance,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationTask {
    pub task_id: String,
    pub doc_title: String,
    /// Sentences joined by spaces, subject and object mentions wrapped in
    /// `<subj>..</subj>` and `<obj>..</obj>`.
    pub text: String,
    pub document: DisplayDocument,
    pub candidate: Candidate,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub task_id: String,
    pub annotator_id: String,
    pub verdict: Verdict,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default)]
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission_id: Option<String>,
}

/// First 16 hex digits of SHA-256 over `title`, `h`, `t`, `r` joined by tabs.
pub fn task_id(title: &str, h: usize, t: usize, r: &str) -> String {
    let digest = Sha256::digest(format!("{title}\t{h}\t{t}\t{r}").as_bytes());
    crate::proposer::hex(&digest[..8])
}

fn display_document(doc: &Document, h: usize, t: usize) -> (String, DisplayDocument) {
    let mut paragraphs = Vec::with_capacity(doc.sents.len());
    let mut highlights = Vec::new();
    let mut tagged = Vec::with_capacity(doc.sents.len());
    for (si, sent) in doc.sents.iter().enumerate() {
        let mut starts = Vec::with_capacity(sent.len() + 1);
        let mut offset = 0;
        for tok in sent {
            starts.push(offset);
            offset += tok.chars().count() + 1;
        }
        let mut open: BTreeMap<usize, &str> = BTreeMap::new();
        let mut close: BTreeMap<usize, &str> = BTreeMap::new();
        for (entity, role, tag) in [(h, HighlightRole::Subject, "subj"), (t, HighlightRole::Object, "obj")] {
            for m in doc.vertex_set[entity].mentions().iter().filter(|m| m.sent_id == si) {
                let [a, b] = m.pos;
                highlights.push(Highlight {
                    paragraph: si,
                    start: starts[a],
                    end: starts[b - 1] + sent[b - 1].chars().count(),
                    role,
                });
                open.entry(a).or_insert(tag);
                close.entry(b - 1).or_insert(tag);
            }
        }
        let mut words = Vec::with_capacity(sent.len());
        for (i, tok) in sent.iter().enumerate() {
            let mut w = String::new();
            if let Some(tag) = open.get(&i) {
                w.push_str(&format!("<{tag}>"));
            }
            w.push_str(tok);
            if let Some(tag) = close.get(&i) {
                w.push_str(&format!("</{tag}>"));
            }
            words.push(w);
        }
        tagged.push(words.join(" "));
        paragraphs.push(sent.join(" "));
    }
    highlights.sort_by_key(|x| (x.paragraph, x.start, x.end));
    (tagged.join(" "), DisplayDocument { paragraphs, highlights })
}

/// One task per distinct `(title, h, t, r)`, in candidate order.
pub fn export_tasks(
    candidates: &[AlignedTriple],
    corpus: &Corpus,
    registry: &Registry,
) -> Result<Vec<VerificationTask>, VerificationError> {
    let index = corpus.title_index()?;
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(candidates.len());
    for c in candidates {
        let doc = index
            .get(c.doc_title.as_str())
            .map(|&i| &corpus.documents[i])
            .ok_or_else(|| VerificationError::UnknownTitle(c.doc_title.clone()))?;
        let n = doc.vertex_set.len();
        if c.h >= n || c.t >= n {
            return Err(VerificationError::UnknownEntity {
                title: c.doc_title.clone(),
                h: c.h,
                t: c.t,
            });
        }
        let rel = registry.get(&c.r).ok_or_else(|| VerificationError::UnknownRelation {
            title: c.doc_title.clone(),
            r: c.r.clone(),
        })?;
        let id = task_id(&c.doc_title, c.h, c.t, &c.r);
        if !seen.insert(id.clone()) {
            continue;
        }
        let subject_name = doc.vertex_set[c.h].canonical_name().to_string();
        let object_name = doc.vertex_set[c.t].canonical_name().to_string();
        let (text, document) = display_document(doc, c.h, c.t);
        tasks.push(VerificationTask {
            task_id: id,
            doc_title: c.doc_title.clone(),
            text,
            document,
            candidate: Candidate {
                h: c.h,
                t: c.t,
                statement: verbalize_hypothesis(rel, &subject_name, &object_name),
                subject_name,
                object_name,
                relation_id: rel.id.clone(),
                relation_name: rel.name.clone(),
                provenance: c.provenance,
                score: c.fused_score,
            },
            status: TaskStatus::Open,
        });
    }
    Ok(tasks)
}

/// State of one task given its decisions in arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskState {
    pub status: TaskStatus,
    pub verdict: Option<Verdict>,
    pub path: Option<ResolutionPath>,
}

/// Applies the two-plus-one rule. Skips are ignored; decisions beyond the
/// ones that settle the task have no effect.
pub fn task_state<'a>(decisions: impl IntoIterator<Item = &'a Decision>) -> TaskState {
    let mut annotators = Vec::new();
    let mut adjudicator = None;
    for d in decisions {
        if d.verdict == Verdict::Skip {
            continue;
        }
        match d.role {
            Role::Annotator => annotators.push(d.verdict),
            Role::Adjudicator if adjudicator.is_none() => adjudicator = Some(d.verdict),
            Role::Adjudicator => {}
        }
    }
    match annotators.as_slice() {
        [a, b, ..] if a == b => TaskState {
            status: TaskStatus::Resolved,
            verdict: Some(*a),
            path: Some(ResolutionPath::Unanimous),
        },
        [_, _, rest @ ..] => match adjudicator.or(rest.first().copied()) {
            Some(v) => TaskState {
                status: TaskStatus::Resolved,
                verdict: Some(v),
                path: Some(ResolutionPath::Adjudicated),
            },
            None => TaskState {
                status: TaskStatus::Conflicted,
                verdict: None,
                path: None,
            },
        },
        _ => TaskState {
            status: TaskStatus::Open,
            verdict: None,
            path: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationOutcome {
    pub task_id: String,
    pub verdict: Verdict,
    pub path: ResolutionPath,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationReport {
    /// Resolved tasks, ordered by task id.
    pub outcomes: Vec<AdjudicationOutcome>,
    /// Tasks whose first two judgements disagree and still await a third.
    pub conflicted: Vec<String>,
    /// Tasks with fewer than two judgements.
    pub open: Vec<String>,
    pub accepted: usize,
    pub unanimous: usize,
    pub adjudicated: usize,
}

impl AdjudicationReport {
    /// Accepted over resolved, as a fraction; `None` when nothing is resolved.
    pub fn acceptance_rate(&self) -> Option<f64> {
        rate(self.accepted, self.outcomes.len())
    }
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Groups decisions by task (stable on timestamp, then input order) and resolves each task.
pub fn adjudicate(decisions: &[Decision]) -> Result<AdjudicationReport, VerificationError> {
    let mut ordered: Vec<&Decision> = decisions.iter().collect();
    ordered.sort_by_key(|d| d.timestamp);
    let mut by_task: BTreeMap<&str, Vec<&Decision>> = BTreeMap::new();
    let mut judged = BTreeSet::new();
    for d in ordered {
        if d.verdict != Verdict::Skip && !judged.insert((d.task_id.as_str(), d.annotator_id.as_str())) {
            return Err(VerificationError::DuplicateDecision {
                task_id: d.task_id.clone(),
                annotator_id: d.annotator_id.clone(),
            });
        }
        by_task.entry(&d.task_id).or_default().push(d);
    }
    let mut report = AdjudicationReport::default();
    for (task, ds) in by_task {
        let state = task_state(ds.iter().copied());
        match (state.status, state.verdict, state.path) {
            (TaskStatus::Resolved, Some(verdict), Some(path)) => {
                if verdict == Verdict::Accept {
                    report.accepted += 1;
                }
                match path {
                    ResolutionPath::Unanimous => report.unanimous += 1,
                    ResolutionPath::Adjudicated => report.adjudicated += 1,
                }
                report.outcomes.push(AdjudicationOutcome {
                    task_id: task.to_string(),
                    verdict,
                    path,
                });
            }
            (TaskStatus::Conflicted, ..) => report.conflicted.push(task.to_string()),
            _ => report.open.push(task.to_string()),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProvenanceRate {
    pub resolved: usize,
    pub accepted: usize,
    pub rate: Option<f64>,
}

/// Acceptance split by how each candidate was aligned. The headline rate
/// covers NLI-selected candidates only; direct matches are reported beside it.
pub fn acceptance_by_provenance(
    report: &AdjudicationReport,
    tasks: &[VerificationTask],
) -> BTreeMap<Provenance, ProvenanceRate> {
    let provenance: BTreeMap<&str, Provenance> =
        tasks.iter().map(|t| (t.task_id.as_str(), t.candidate.provenance)).collect();
    let mut out: BTreeMap<Provenance, ProvenanceRate> = BTreeMap::new();
    for o in &report.outcomes {
        let Some(&p) = provenance.get(o.task_id.as_str()) else {
            continue;
        };
        let e = out.entry(p).or_default();
        e.resolved += 1;
        if o.verdict == Verdict::Accept {
            e.accepted += 1;
        }
    }
    for e in out.values_mut() {
        e.rate = rate(e.accepted, e.resolved);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ApplyReport {
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted candidates the corpus already had.
    pub duplicates: usize,
    pub added: usize,
}

/// Merges accepted candidates into `corpus` with empty evidence.
pub fn apply_verification(
    corpus: &Corpus,
    outcomes: &[AdjudicationOutcome],
    tasks: &[VerificationTask],
) -> Result<(Corpus, ApplyReport), VerificationError> {
    let verdicts: BTreeMap<&str, Verdict> = outcomes.iter().map(|o| (o.task_id.as_str(), o.verdict)).collect();
    let mut report = ApplyReport::default();
    let mut accepted = Vec::new();
    for task in tasks {
        match verdicts.get(task.task_id.as_str()) {
            Some(Verdict::Accept) => {
                report.accepted += 1;
                accepted.push(AlignedTriple {
                    doc_title: task.doc_title.clone(),
                    h: task.candidate.h,
                    t: task.candidate.t,
                    r: task.candidate.relation_id.clone(),
                    fused_score: task.candidate.score,
                    provenance: task.candidate.provenance,
                    premise: String::new(),
                    chosen_hypothesis: task.candidate.statement.clone(),
                });
            }
            Some(Verdict::Reject) => report.rejected += 1,
            _ => {}
        }
    }
    let (merged, added) = merge_into_dataset(corpus, &accepted)?;
    report.added = added;
    report.duplicates = report.accepted - added;
    Ok((merged, report))
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, VerificationError> {
    let text = std::fs::read_to_string(path).map_err(|source| VerificationError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_lines(&text, &path.display().to_string())
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str, source: &str) -> Result<Vec<T>, VerificationError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| VerificationError::Parse {
            path: source.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Decisions from JSON-lines text, such as the body of `/api/export`.
pub fn parse_decision_lines(text: &str) -> Result<Vec<Decision>, VerificationError> {
    parse_lines(text, "<text>")
}

pub fn read_tasks(path: impl AsRef<Path>) -> Result<Vec<VerificationTask>, VerificationError> {
    read_lines(path.as_ref())
}

pub fn read_decisions(path: impl AsRef<Path>) -> Result<Vec<Decision>, VerificationError> {
    read_lines(path.as_ref())
}

pub fn to_json_lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_json_lines<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), VerificationError> {
    let path = path.as_ref();
    std::fs::write(path, to_json_lines(items)).map_err(|source| VerificationError::Write {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use proptest::prelude::*;

    fn corpus() -> Corpus {
        let json = r#"[{"title":"Berlin","sents":[["Berlin","is","in","Germany","."],["The","city","of","Berlin","grew","."]],
            "vertexSet":[[{"name":"Berlin","sent_id":0,"pos":[0,1],"type":"LOC"},{"name":"Berlin","sent_id":1,"pos":[3,4],"type":"LOC"}],
                         [{"name":"Germany","sent_id":0,"pos":[3,4],"type":"LOC"}]],
            "labels":[]}]"#;
        parse_corpus(json, &Registry::builtin()).unwrap()
    }

    fn candidate(h: usize, t: usize, r: &str) -> AlignedTriple {
        AlignedTriple {
            doc_title: "Berlin".into(),
            h,
            t,
            r: r.into(),
            fused_score: 0.8,
            provenance: Provenance::Nli,
            premise: String::new(),
            chosen_hypothesis: String::new(),
        }
    }

    fn d(task: &str, who: &str, verdict: Verdict, ts: u64, role: Role) -> Decision {
        Decision {
            task_id: task.into(),
            annotator_id: who.into(),
            verdict,
            timestamp: ts,
            role,
            submission_id: None,
        }
    }

    use Role::{Adjudicator as Adj, Annotator as Ann};
    use Verdict::{Accept as A, Reject as R, Skip as S};

    #[test]
    fn export_renders_statement_and_highlights() {
        let reg = Registry::builtin();
        let tasks = export_tasks(&[candidate(0, 1, "P17"), candidate(1, 0, "P150"), candidate(0, 1, "P131")], &corpus(), &reg).unwrap();
        assert_eq!(tasks.len(), 3);
        let ids: BTreeSet<_> = tasks.iter().map(|t| &t.task_id).collect();
        assert_eq!(ids.len(), 3);
        let t = &tasks[0];
        assert_eq!(t.candidate.statement, "The sovereign state of this item Berlin is Germany.");
        assert_eq!(t.text, "<subj>Berlin</subj> is in <obj>Germany</obj> . The city of <subj>Berlin</subj> grew .");
        assert_eq!(t.document.paragraphs[0], "Berlin is in Germany .");
        let spans: Vec<_> = t.document.highlights.iter().map(|h| (h.paragraph, h.start, h.end, h.role)).collect();
        assert_eq!(
            spans,
            [
                (0, 0, 6, HighlightRole::Subject),
                (0, 13, 20, HighlightRole::Object),
                (1, 12, 18, HighlightRole::Subject)
            ]
        );
        assert_eq!(&t.document.paragraphs[1][12..18], "Berlin");
        assert_eq!(t.status, TaskStatus::Open);
        let again = export_tasks(&[candidate(0, 1, "P17")], &corpus(), &reg).unwrap();
        assert_eq!(again[0].task_id, t.task_id);
    }

    #[test]
    fn export_errors() {
        let reg = Registry::builtin();
        let mut c = candidate(0, 1, "P17");
        c.doc_title = "Nowhere".into();
        assert!(matches!(export_tasks(&[c], &corpus(), &reg), Err(VerificationError::UnknownTitle(_))));
        assert!(matches!(
            export_tasks(&[candidate(0, 5, "P17")], &corpus(), &reg),
            Err(VerificationError::UnknownEntity { .. })
        ));
    }

    #[test]
    fn two_plus_one_rule() {
        let s = |ds: &[Decision]| task_state(ds.iter());
        let st = s(&[d("x", "a", A, 1, Ann), d("x", "b", A, 2, Ann)]);
        assert_eq!((st.verdict, st.path), (Some(A), Some(ResolutionPath::Unanimous)));
        let st = s(&[d("x", "a", A, 1, Ann), d("x", "b", R, 2, Ann)]);
        assert_eq!(st.status, TaskStatus::Conflicted);
        let st = s(&[d("x", "a", A, 1, Ann), d("x", "b", R, 2, Ann), d("x", "c", R, 3, Ann)]);
        assert_eq!((st.verdict, st.path), (Some(R), Some(ResolutionPath::Adjudicated)));
        // an adjudicator outranks a third annotator
        let st = s(&[d("x", "a", A, 1, Ann), d("x", "b", R, 2, Ann), d("x", "c", R, 3, Ann), d("x", "j", A, 4, Adj)]);
        assert_eq!(st.verdict, Some(A));
        // skips hold no slot
        let st = s(&[d("x", "a", S, 1, Ann), d("x", "b", A, 2, Ann)]);
        assert_eq!(st.status, TaskStatus::Open);
        // an adjudicator alone does not resolve anything
        let st = s(&[d("x", "j", A, 1, Adj), d("x", "a", R, 2, Ann)]);
        assert_eq!(st.status, TaskStatus::Open);
    }

    #[test]
    fn report_counts() {
        let ds = vec![
            d("t1", "a", A, 1, Ann),
            d("t1", "b", A, 2, Ann),
            d("t2", "a", A, 3, Ann),
            d("t2", "b", R, 4, Ann),
            d("t3", "a", A, 5, Ann),
            d("t3", "b", R, 6, Ann),
            d("t3", "j", R, 7, Adj),
            d("t4", "a", R, 8, Ann),
        ];
        let r = adjudicate(&ds).unwrap();
        assert_eq!(r.outcomes.len(), 2);
        assert_eq!(r.conflicted, ["t2"]);
        assert_eq!(r.open, ["t4"]);
        assert_eq!(r.acceptance_rate(), Some(0.5));
        assert_eq!(r.unanimous + r.adjudicated, r.outcomes.len());
    }

    #[test]
    fn duplicate_decision_is_an_error() {
        let ds = vec![d("t1", "a", A, 1, Ann), d("t1", "a", R, 2, Ann)];
        assert!(matches!(adjudicate(&ds), Err(VerificationError::DuplicateDecision { .. })));
        let ds = vec![d("t1", "a", S, 1, Ann), d("t1", "a", R, 2, Ann)];
        assert!(adjudicate(&ds).is_ok());
    }

    #[test]
    fn apply_adds_accepted_only() {
        let reg = Registry::builtin();
        let c = corpus();
        let tasks = export_tasks(&[candidate(0, 1, "P17"), candidate(1, 0, "P150"), candidate(0, 1, "P131")], &c, &reg).unwrap();
        let outcomes = vec![
            AdjudicationOutcome {
                task_id: tasks[0].task_id.clone(),
                verdict: A,
                path: ResolutionPath::Unanimous,
            },
            AdjudicationOutcome {
                task_id: tasks[1].task_id.clone(),
                verdict: R,
                path: ResolutionPath::Adjudicated,
            },
        ];
        let (merged, report) = apply_verification(&c, &outcomes, &tasks).unwrap();
        assert_eq!(report, ApplyReport { accepted: 1, rejected: 1, duplicates: 0, added: 1 });
        assert_eq!(merged.documents[0].labels.len(), 1);
        assert!(merged.documents[0].has_label(0, 1, "P17"));
        assert!(merged.documents[0].labels[0].evidence.is_empty());

        let (unchanged, _) = apply_verification(&c, &[], &tasks).unwrap();
        assert_eq!(unchanged, c);
    }

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop_oneof![Just(A), Just(R)]
    }

    proptest! {
        #[test]
        fn later_decisions_do_not_change_a_resolution(
            a in verdict(), b in verdict(), c in verdict(), extra in prop::collection::vec(verdict(), 0..4)
        ) {
            let mut ds = vec![d("x", "a", a, 1, Ann), d("x", "b", b, 2, Ann), d("x", "c", c, 3, Ann)];
            let before = task_state(ds.iter());
            for (i, v) in extra.into_iter().enumerate() {
                ds.push(d("x", &format!("z{i}"), v, 10 + i as u64, Ann));
            }
            prop_assert_eq!(task_state(ds.iter()), before);
        }

        #[test]
        fn rate_is_a_fraction(vs in prop::collection::vec((verdict(), verdict(), verdict()), 1..30)) {
            let mut ds = Vec::new();
            for (i, (a, b, c)) in vs.iter().enumerate() {
                let t = format!("t{i}");
                ds.push(d(&t, "a", *a, 1, Ann));
                ds.push(d(&t, "b", *b, 2, Ann));
                ds.push(d(&t, "j", *c, 3, Adj));
            }
            let r = adjudicate(&ds).unwrap();
            let rate = r.acceptance_rate().unwrap();
            prop_assert!((0.0..=1.0).contains(&rate));
            prop_assert_eq!(r.outcomes.len(), vs.len());
        }
    }
}
