//! Single-file, append-only store of verification tasks and decisions.
//!
//! Every record is one JSON line tagged with its kind. Opening a store
//! replays the file; a final line cut short by a crash is ignored.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verification::{task_state, Decision, Role, TaskState, TaskStatus, Verdict, VerificationTask};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store {path}, line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("no task {0}")]
    UnknownTask(String),
    #[error("annotator `{annotator_id}` already decided task {task_id}")]
    Duplicate { task_id: String, annotator_id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Task(Box<VerificationTask>),
    Decision(Decision),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub open: usize,
    pub conflicted: usize,
    pub resolved: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub decisions: usize,
    /// Accepted over resolved, as a fraction.
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    file: File,
    tasks: Vec<VerificationTask>,
    index: HashMap<String, usize>,
    decisions: Vec<Decision>,
    by_task: HashMap<String, Vec<usize>>,
}

impl Store {
    /// Opens `path`, creating it if needed, and replays its records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        let mut store = Store {
            path: path.clone(),
            file: file.try_clone().map_err(io)?,
            tasks: Vec::new(),
            index: HashMap::new(),
            decisions: Vec::new(),
            by_task: HashMap::new(),
        };
        let complete = text.is_empty() || text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) if i + 1 == lines.len() && !complete => {
                    log::warn!("{}: ignoring truncated last record", path.display());
                    break;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path,
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            };
            match record {
                Record::Task(t) => store.insert_task(*t),
                Record::Decision(d) => store.insert_decision(d),
            }
        }
        if !complete {
            // drop the torn tail so the next append starts on a fresh line
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            file.set_len(keep as u64).map_err(io)?;
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn insert_task(&mut self, task: VerificationTask) {
        if self.index.contains_key(&task.task_id) {
            return;
        }
        self.index.insert(task.task_id.clone(), self.tasks.len());
        self.tasks.push(task);
    }

    fn insert_decision(&mut self, d: Decision) {
        self.by_task.entry(d.task_id.clone()).or_default().push(self.decisions.len());
        self.decisions.push(d);
    }

    fn append(&mut self, record: &Record) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("serializable");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })
    }

    /// Adds tasks not yet present; returns how many were new.
    pub fn add_tasks(&mut self, tasks: impl IntoIterator<Item = VerificationTask>) -> Result<usize, StoreError> {
        let mut added = 0;
        for mut t in tasks {
            if self.index.contains_key(&t.task_id) {
                continue;
            }
            t.status = TaskStatus::Open;
            self.append(&Record::Task(Box::new(t.clone())))?;
            self.insert_task(t);
            added += 1;
        }
        Ok(added)
    }

    /// Persists a decision. Timestamps are raised if needed so the log is
    /// never out of order.
    pub fn append_decision(&mut self, mut d: Decision) -> Result<Decision, StoreError> {
        if !self.index.contains_key(&d.task_id) {
            return Err(StoreError::UnknownTask(d.task_id));
        }
        if self.decision_of(&d.task_id, &d.annotator_id).is_some() {
            return Err(StoreError::Duplicate {
                task_id: d.task_id,
                annotator_id: d.annotator_id,
            });
        }
        if let Some(last) = self.decisions.last() {
            d.timestamp = d.timestamp.max(last.timestamp);
        }
        self.append(&Record::Decision(d.clone()))?;
        self.insert_decision(d.clone());
        Ok(d)
    }

    pub fn tasks(&self) -> &[VerificationTask] {
        &self.tasks
    }

    /// Task with its current status filled in.
    pub fn task(&self, task_id: &str) -> Option<VerificationTask> {
        let mut t = self.tasks.get(*self.index.get(task_id)?)?.clone();
        t.status = self.state(task_id).status;
        Some(t)
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn decisions_for(&self, task_id: &str) -> impl Iterator<Item = &Decision> {
        self.by_task
            .get(task_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.decisions[i])
    }

    pub fn decision_of(&self, task_id: &str, annotator_id: &str) -> Option<&Decision> {
        self.decisions_for(task_id).find(|d| d.annotator_id == annotator_id)
    }

    pub fn state(&self, task_id: &str) -> TaskState {
        task_state(self.decisions_for(task_id))
    }

    /// Judgements from the annotator role that hold a slot (skips do not).
    pub fn filled_slots(&self, task_id: &str) -> usize {
        self.decisions_for(task_id)
            .filter(|d| d.role == Role::Annotator && d.verdict != Verdict::Skip)
            .count()
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            total: self.tasks.len(),
            decisions: self.decisions.len(),
            ..Progress::default()
        };
        for t in &self.tasks {
            let s = self.state(&t.task_id);
            match s.status {
                TaskStatus::Open => p.open += 1,
                TaskStatus::Conflicted => p.conflicted += 1,
                TaskStatus::Resolved => {
                    p.resolved += 1;
                    match s.verdict {
                        Some(Verdict::Accept) => p.accepted += 1,
                        _ => p.rejected += 1,
                    }
                }
            }
        }
        p.acceptance_rate = (p.resolved > 0).then(|| p.accepted as f64 / p.resolved as f64);
        p
    }

    /// Final verdicts of resolved tasks, by task id.
    pub fn resolved(&self) -> BTreeMap<String, Verdict> {
        self.tasks
            .iter()
            .filter_map(|t| self.state(&t.task_id).verdict.map(|v| (t.task_id.clone(), v)))
            .collect()
    }
}
