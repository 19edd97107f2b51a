//! DocRED-schema corpora: loading, validation, statistics, diffing and emission.
//!
//! A corpus file is a JSON array of documents. Each document carries its
//! `title`, tokenized `sents`, the `vertexSet` (one list of mentions per
//! entity) and the gold `labels`. Unknown fields are kept verbatim so a
//! load/emit cycle does not lose information.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::registry::Registry;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus is not a JSON array of documents: {0}")]
    NotAnArray(String),
    #[error("document {doc_index}: malformed field `{field}`: {message}")]
    Malformed {
        doc_index: usize,
        field: String,
        message: String,
    },
    #[error("document {doc_index} ({title}): unknown relation id(s): {}", ids.join(", "))]
    UnknownRelation {
        doc_index: usize,
        title: String,
        ids: Vec<String>,
    },
    #[error("document `{0}` is present in only one of the corpora")]
    UnmatchedDocument(String),
    #[error("duplicate document title `{0}`")]
    DuplicateTitle(String),
    #[error("no document titled `{0}`")]
    UnknownTitle(String),
}

/// The six DocRED entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PER")]
    Person,
    #[serde(rename = "ORG")]
    Organization,
    #[serde(rename = "LOC")]
    Location,
    #[serde(rename = "TIME")]
    Time,
    #[serde(rename = "NUM")]
    Number,
    #[serde(rename = "MISC")]
    Misc,
}

impl EntityType {
    pub const ALL: [EntityType; 6] = [
        EntityType::Person,
        EntityType::Organization,
        EntityType::Location,
        EntityType::Time,
        EntityType::Number,
        EntityType::Misc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Person => "PER",
            EntityType::Organization => "ORG",
            EntityType::Location => "LOC",
            EntityType::Time => "TIME",
            EntityType::Number => "NUM",
            EntityType::Misc => "MISC",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown entity type `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub name: String,
    pub sent_id: usize,
    /// Half-open token span `[start, end)` within sentence `sent_id`.
    pub pos: [usize; 2],
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Mention {
    pub fn new(name: impl Into<String>, sent_id: usize, start: usize, end: usize, ty: EntityType) -> Self {
        Mention {
            name: name.into(),
            sent_id,
            pos: [start, end],
            entity_type: ty,
            extra: Map::new(),
        }
    }
}

/// A cluster of coreferent mentions.
///
/// Serialized as the bare mention list, as in `vertexSet`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Mention>", into = "Vec<Mention>")]
pub struct Entity {
    mentions: Vec<Mention>,
    entity_type: EntityType,
    canonical: usize,
}

impl Entity {
    pub fn new(mentions: Vec<Mention>) -> Result<Self, String> {
        Self::try_from(mentions)
    }

    pub fn mentions(&self) -> &[Mention] {
        &self.mentions
    }

    /// Majority mention type; ties go to the type seen first.
    pub fn entity_type(&self) -> EntityType {
        self.entity_type
    }

    /// Surface of the longest mention (first one on ties).
    pub fn canonical_name(&self) -> &str {
        &self.mentions[self.canonical].name
    }
}

impl TryFrom<Vec<Mention>> for Entity {
    type Error = String;

    fn try_from(mentions: Vec<Mention>) -> Result<Self, Self::Error> {
        if mentions.is_empty() {
            return Err("entity has no mentions".into());
        }
        let mut counts: Vec<(EntityType, usize)> = Vec::new();
        for m in &mentions {
            match counts.iter_mut().find(|(t, _)| *t == m.entity_type) {
                Some((_, n)) => *n += 1,
                None => counts.push((m.entity_type, 1)),
            }
        }
        let mut entity_type = counts[0].0;
        let mut best = counts[0].1;
        for &(t, n) in &counts[1..] {
            if n > best {
                entity_type = t;
                best = n;
            }
        }
        let mut canonical = 0;
        for (i, m) in mentions.iter().enumerate() {
            if m.name.chars().count() > mentions[canonical].name.chars().count() {
                canonical = i;
            }
        }
        Ok(Entity {
            mentions,
            entity_type,
            canonical,
        })
    }
}

impl From<Entity> for Vec<Mention> {
    fn from(e: Entity) -> Self {
        e.mentions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldTriple {
    pub h: usize,
    pub t: usize,
    pub r: String,
    #[serde(default)]
    pub evidence: Vec<usize>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl GoldTriple {
    pub fn new(h: usize, t: usize, r: impl Into<String>) -> Self {
        GoldTriple {
            h,
            t,
            r: r.into(),
            evidence: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn key(&self) -> (usize, usize, &str) {
        (self.h, self.t, &self.r)
    }
}

/// Corpus-wide triple identity: `(title, h, t, r)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripleKey {
    pub title: String,
    pub h: usize,
    pub t: usize,
    pub r: String,
}

impl TripleKey {
    pub fn new(title: impl Into<String>, h: usize, t: usize, r: impl Into<String>) -> Self {
        TripleKey {
            title: title.into(),
            h,
            t,
            r: r.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    pub vertex_set: Vec<Entity>,
    #[serde(default)]
    pub labels: Vec<GoldTriple>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Document {
    /// Sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sents
            .iter()
            .map(|s| s.join(" "))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn has_label(&self, h: usize, t: usize, r: &str) -> bool {
        self.labels.iter().any(|l| l.key() == (h, t, r))
    }

    /// Checks every structural invariant except relation membership.
    fn check_structure(&self) -> Result<(), (String, String)> {
        if self.title.is_empty() {
            return Err(("title".into(), "empty title".into()));
        }
        for (ei, entity) in self.vertex_set.iter().enumerate() {
            for (mi, m) in entity.mentions().iter().enumerate() {
                let field = format!("vertexSet[{ei}][{mi}]");
                if m.name.is_empty() {
                    return Err((format!("{field}.name"), "empty mention name".into()));
                }
                let [start, end] = m.pos;
                if start >= end {
                    return Err((format!("{field}.pos"), format!("span end {end} <= start {start}")));
                }
                let Some(sent) = self.sents.get(m.sent_id) else {
                    return Err((
                        format!("{field}.sent_id"),
                        format!("sentence {} out of range ({} sentences)", m.sent_id, self.sents.len()),
                    ));
                };
                if end > sent.len() {
                    return Err((
                        format!("{field}.pos"),
                        format!("span end {end} exceeds sentence length {}", sent.len()),
                    ));
                }
            }
        }
        let n = self.vertex_set.len();
        for (li, l) in self.labels.iter().enumerate() {
            if l.h >= n || l.t >= n {
                return Err((
                    format!("labels[{li}]"),
                    format!("entity index out of range ({} entities)", n),
                ));
            }
            if l.h == l.t {
                return Err((format!("labels[{li}]"), "head equals tail".into()));
            }
        }
        Ok(())
    }

    /// Drops repeated `(h, t, r)` labels, keeping the first. Returns how many went.
    fn dedup_labels(&mut self) -> usize {
        let before = self.labels.len();
        let mut seen = BTreeSet::new();
        self.labels.retain(|l| seen.insert((l.h, l.t, l.r.clone())));
        before - self.labels.len()
    }
}

/// An ordered list of documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Corpus { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Title → position. Fails on duplicate titles since titles key documents across corpora.
    pub fn title_index(&self) -> Result<HashMap<&str, usize>, CorpusError> {
        let mut index = HashMap::with_capacity(self.documents.len());
        for (i, d) in self.documents.iter().enumerate() {
            if index.insert(d.title.as_str(), i).is_some() {
                return Err(CorpusError::DuplicateTitle(d.title.clone()));
            }
        }
        Ok(index)
    }

    pub fn document(&self, title: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.title == title)
    }

    pub fn triple_keys(&self) -> BTreeSet<TripleKey> {
        self.documents
            .iter()
            .flat_map(|d| {
                d.labels
                    .iter()
                    .map(move |l| TripleKey::new(d.title.clone(), l.h, l.t, l.r.clone()))
            })
            .collect()
    }

    /// Compact JSON, the convention of the DocRED release files.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("corpus serialization cannot fail")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| CorpusError::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn load_corpus(path: impl AsRef<Path>, registry: &Registry) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, registry)
}

/// Parses and validates corpus JSON. Repeated labels are dropped with a warning.
pub fn parse_corpus(text: &str, registry: &Registry) -> Result<Corpus, CorpusError> {
    let raw: Vec<Value> = serde_json::from_str(text).map_err(|e| CorpusError::NotAnArray(e.to_string()))?;
    let mut documents = Vec::with_capacity(raw.len());
    for (doc_index, value) in raw.into_iter().enumerate() {
        let mut doc: Document = serde_path_to_error::deserialize(value).map_err(|e| CorpusError::Malformed {
            doc_index,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        doc.check_structure()
            .map_err(|(field, message)| CorpusError::Malformed {
                doc_index,
                field,
                message,
            })?;
        let unknown: BTreeSet<&str> = doc
            .labels
            .iter()
            .map(|l| l.r.as_str())
            .filter(|r| registry.get(r).is_none())
            .collect();
        if !unknown.is_empty() {
            return Err(CorpusError::UnknownRelation {
                doc_index,
                title: doc.title.clone(),
                ids: unknown.into_iter().map(String::from).collect(),
            });
        }
        let dropped = doc.dedup_labels();
        if dropped > 0 {
            log::warn!("document {doc_index} ({}): dropped {dropped} duplicate label(s)", doc.title);
        }
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub entity_count: usize,
    pub triple_count: usize,
    pub per_relation: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn combine(&self, other: &CorpusStats) -> CorpusStats {
        let mut per_relation = self.per_relation.clone();
        for (r, n) in &other.per_relation {
            *per_relation.entry(r.clone()).or_default() += n;
        }
        CorpusStats {
            doc_count: self.doc_count + other.doc_count,
            entity_count: self.entity_count + other.entity_count,
            triple_count: self.triple_count + other.triple_count,
            per_relation,
        }
    }
}

pub fn dataset_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        doc_count: corpus.documents.len(),
        ..Default::default()
    };
    for doc in &corpus.documents {
        stats.entity_count += doc.vertex_set.len();
        stats.triple_count += doc.labels.len();
        for l in &doc.labels {
            *stats.per_relation.entry(l.r.clone()).or_default() += 1;
        }
    }
    stats
}

/// Triples of `superset` that `base` lacks, in superset order. Documents are matched by title.
pub fn diff_triples(superset: &Corpus, base: &Corpus) -> Result<Vec<(String, GoldTriple)>, CorpusError> {
    let sup_index = superset.title_index()?;
    let base_index = base.title_index()?;
    if let Some(d) = base.documents.iter().find(|d| !sup_index.contains_key(d.title.as_str())) {
        return Err(CorpusError::UnmatchedDocument(d.title.clone()));
    }
    let mut out = Vec::new();
    for doc in &superset.documents {
        let Some(&bi) = base_index.get(doc.title.as_str()) else {
            return Err(CorpusError::UnmatchedDocument(doc.title.clone()));
        };
        let existing: BTreeSet<(usize, usize, &str)> = base.documents[bi].labels.iter().map(GoldTriple::key).collect();
        for l in &doc.labels {
            if !existing.contains(&l.key()) {
                out.push((doc.title.clone(), l.clone()));
            }
        }
    }
    Ok(out)
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Matching key for entity surfaces: NFC, lowercase, collapsed whitespace,
/// surrounding quotes and trailing periods removed.
pub fn normalize_surface(surface: &str) -> String {
    let nfc: String = surface.nfc().collect();
    let lowered = nfc.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = collapsed.as_str();
    loop {
        let next = s.trim_matches(QUOTES).trim_end_matches('.').trim();
        if next == s {
            break;
        }
        s = next;
    }
    s.to_string()
}

/// Normalized mention surface → entity index. On collisions the lower index wins.
pub fn entity_surface_index(doc: &Document) -> BTreeMap<String, usize> {
    let mut index = BTreeMap::new();
    for (i, entity) in doc.vertex_set.iter().enumerate() {
        for m in entity.mentions() {
            let key = normalize_surface(&m.name);
            if !key.is_empty() {
                index.entry(key).or_insert(i);
            }
        }
    }
    index
}
