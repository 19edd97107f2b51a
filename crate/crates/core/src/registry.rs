//! The predefined relation inventory and its natural-language verbalization.
//!
//! Each relation type carries a hypothesis template in which the literal
//! tokens `sub.` and `obj.` stand for the subject and object entity. A
//! relation may also restrict the entity types allowed on either side; an
//! empty set means unconstrained.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EntityType};
use crate::proposer::ProposalTriple;

pub const SUBJECT_PLACEHOLDER: &str = "sub.";
pub const OBJECT_PLACEHOLDER: &str = "obj.";

const BUILTIN_RELATIONS: &str = include_str!("../data/relations.json");
const BUILTIN_CONSTRAINTS: &str = include_str!("../data/type_constraints.json");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid registry file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("relation {id}: template lacks the `{placeholder}` placeholder")]
    MissingPlaceholder { id: String, placeholder: &'static str },
    #[error("relation {0}: {1}")]
    Invalid(String, String),
    #[error("duplicate relation id {0}")]
    DuplicateId(String),
    #[error("unknown relation id {0}")]
    UnknownRelation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub id: String,
    pub name: String,
    pub template: String,
    #[serde(default)]
    pub subject_types: BTreeSet<EntityType>,
    #[serde(default)]
    pub object_types: BTreeSet<EntityType>,
}

impl RelationType {
    pub fn new(id: impl Into<String>, name: impl Into<String>, template: impl Into<String>) -> Self {
        RelationType {
            id: id.into(),
            name: name.into(),
            template: template.into(),
            subject_types: BTreeSet::new(),
            object_types: BTreeSet::new(),
        }
    }

    fn validate(&self) -> Result<(), RegistryError> {
        if self.id.trim().is_empty() {
            return Err(RegistryError::Invalid(self.id.clone(), "empty id".into()));
        }
        if self.name.trim().is_empty() {
            return Err(RegistryError::Invalid(self.id.clone(), "empty name".into()));
        }
        for placeholder in [SUBJECT_PLACEHOLDER, OBJECT_PLACEHOLDER] {
            if !self.template.contains(placeholder) {
                return Err(RegistryError::MissingPlaceholder {
                    id: self.id.clone(),
                    placeholder,
                });
            }
        }
        Ok(())
    }

    /// Whether a `(subject, object)` type pair satisfies this relation's constraints.
    pub fn admits(&self, subject: EntityType, object: EntityType) -> bool {
        (self.subject_types.is_empty() || self.subject_types.contains(&subject))
            && (self.object_types.is_empty() || self.object_types.contains(&object))
    }
}

/// One entry of a type-constraint file. Same schema as the registry file,
/// with `name` and `template` optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default)]
    pub subject_types: BTreeSet<EntityType>,
    #[serde(default)]
    pub object_types: BTreeSet<EntityType>,
}

/// Ordered, immutable relation inventory.
#[derive(Debug, Clone)]
pub struct Registry {
    relations: Vec<RelationType>,
    by_id: HashMap<String, usize>,
    by_name: HashMap<String, usize>,
}

impl Registry {
    pub fn new(relations: Vec<RelationType>) -> Result<Self, RegistryError> {
        let mut by_id = HashMap::with_capacity(relations.len());
        let mut by_name = HashMap::with_capacity(relations.len());
        for (i, rel) in relations.iter().enumerate() {
            rel.validate()?;
            if by_id.insert(rel.id.clone(), i).is_some() {
                return Err(RegistryError::DuplicateId(rel.id.clone()));
            }
            by_name.entry(normalize_relation_name(&rel.name)).or_insert(i);
        }
        Ok(Registry {
            relations,
            by_id,
            by_name,
        })
    }

    /// The 96 DocRED relation types with the shipped type-constraint table applied.
    pub fn builtin() -> Self {
        let relations: Vec<RelationType> =
            serde_json::from_str(BUILTIN_RELATIONS).expect("shipped relation table is valid JSON");
        let constraints: Vec<ConstraintEntry> =
            serde_json::from_str(BUILTIN_CONSTRAINTS).expect("shipped constraint table is valid JSON");
        Registry::new(relations)
            .and_then(|r| r.with_constraints(&constraints))
            .expect("shipped relation table is valid")
    }

    /// Replaces the type constraints of every relation named in `entries`.
    pub fn with_constraints(mut self, entries: &[ConstraintEntry]) -> Result<Self, RegistryError> {
        for entry in entries {
            let i = *self
                .by_id
                .get(&entry.id)
                .ok_or_else(|| RegistryError::UnknownRelation(entry.id.clone()))?;
            self.relations[i].subject_types = entry.subject_types.clone();
            self.relations[i].object_types = entry.object_types.clone();
        }
        Ok(self)
    }

    pub fn with_constraints_file(self, path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let entries: Vec<ConstraintEntry> = serde_json::from_str(&read(path.as_ref())?)?;
        self.with_constraints(&entries)
    }

    /// A registry holding only the listed relations, in the given order.
    pub fn restricted(&self, ids: &[&str]) -> Result<Self, RegistryError> {
        let relations = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| RegistryError::UnknownRelation(id.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Registry::new(relations)
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RelationType> {
        self.relations.iter()
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn get(&self, id: &str) -> Option<&RelationType> {
        self.by_id.get(id).map(|&i| &self.relations[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Looks a relation up by name, ignoring case and surrounding whitespace.
    pub fn by_name(&self, name: &str) -> Option<&RelationType> {
        self.by_name
            .get(&normalize_relation_name(name))
            .map(|&i| &self.relations[i])
    }

    pub fn check_type_constraint(
        &self,
        id: &str,
        subject: EntityType,
        object: EntityType,
    ) -> Result<bool, RegistryError> {
        self.get(id)
            .map(|rel| rel.admits(subject, object))
            .ok_or_else(|| RegistryError::UnknownRelation(id.to_string()))
    }
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry, RegistryError> {
    let relations: Vec<RelationType> = serde_json::from_str(&read(path.as_ref())?)?;
    Registry::new(relations)
}

fn read(path: &Path) -> Result<String, RegistryError> {
    std::fs::read_to_string(path).map_err(|source| RegistryError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn normalize_relation_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Subject and object as proposed.
    Forward,
    /// Subject and object swapped.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypothesis {
    pub relation_id: String,
    /// Position of the relation in its registry.
    pub relation_index: usize,
    pub direction: Direction,
    pub sentence: String,
}

/// Joins subject, relation phrase and object with single spaces and ends the sentence.
pub fn premise_sentence(subject: &str, relation: &str, object: &str) -> String {
    format!("{subject} {relation} {object}.")
}

pub fn verbalize_premise(proposal: &ProposalTriple) -> String {
    premise_sentence(
        &proposal.subject_surface,
        &proposal.relation_phrase,
        &proposal.object_surface,
    )
}

/// Fills the template in one left-to-right pass. Substituted names are never
/// rescanned, so a name that itself reads `sub.` stays as written. A
/// placeholder that ends the template also ends the sentence, so its period
/// is kept.
pub fn verbalize_hypothesis(rel: &RelationType, subject: &str, object: &str) -> String {
    let template = rel.template.as_str();
    let mut out = String::with_capacity(template.len() + subject.len() + object.len());
    let mut rest = template;
    while !rest.is_empty() {
        if let Some(tail) = rest.strip_prefix(SUBJECT_PLACEHOLDER) {
            out.push_str(subject);
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix(OBJECT_PLACEHOLDER) {
            out.push_str(object);
            rest = tail;
        } else {
            let ch = rest.chars().next().expect("non-empty");
            out.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
    }
    let ends_on_placeholder = rel.template.ends_with(SUBJECT_PLACEHOLDER) || rel.template.ends_with(OBJECT_PLACEHOLDER);
    if ends_on_placeholder && !out.ends_with('.') {
        out.push('.');
    }
    out
}

/// Two hypotheses per relation, forward then inverse, in registry order.
pub fn enumerate_hypotheses(proposal: &ProposalTriple, registry: &Registry) -> Vec<Hypothesis> {
    hypotheses_for(&proposal.subject_surface, &proposal.object_surface, registry)
}

pub fn hypotheses_for(subject: &str, object: &str, registry: &Registry) -> Vec<Hypothesis> {
    let mut out = Vec::with_capacity(registry.len() * 2);
    for (i, rel) in registry.iter().enumerate() {
        out.push(Hypothesis {
            relation_id: rel.id.clone(),
            relation_index: i,
            direction: Direction::Forward,
            sentence: verbalize_hypothesis(rel, subject, object),
        });
        out.push(Hypothesis {
            relation_id: rel.id.clone(),
            relation_index: i,
            direction: Direction::Inverse,
            sentence: verbalize_hypothesis(rel, object, subject),
        });
    }
    out
}

/// Scans gold labels and records, per relation, every subject and object
/// entity type observed. The result can be written out as a constraint file.
pub fn derive_type_constraints(corpus: &Corpus) -> Vec<ConstraintEntry> {
    let mut seen: BTreeMap<&str, (BTreeSet<EntityType>, BTreeSet<EntityType>)> = BTreeMap::new();
    for doc in &corpus.documents {
        for label in &doc.labels {
            let entry = seen.entry(label.r.as_str()).or_default();
            entry.0.insert(doc.vertex_set[label.h].entity_type());
            entry.1.insert(doc.vertex_set[label.t].entity_type());
        }
    }
    seen.into_iter()
        .map(|(id, (subject_types, object_types))| ConstraintEntry {
            id: id.to_string(),
            name: None,
            template: None,
            subject_types,
            object_types,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityType::*;
    use proptest::prelude::*;

    fn proposal(s: &str, r: &str, o: &str) -> ProposalTriple {
        ProposalTriple::new("doc", 0, 0, s, r, o)
    }

    #[test]
    fn builtin_has_96_relations() {
        let reg = Registry::builtin();
        assert_eq!(reg.len(), 96);
        assert_eq!(reg.relations()[0].id, "P6");
        assert_eq!(reg.relations()[95].id, "P3373");
    }

    #[test]
    fn templates_are_verbatim() {
        let reg = Registry::builtin();
        assert_eq!(reg.get("P17").unwrap().template, "The sovereign state of this item sub. is obj.");
        assert_eq!(reg.get("P3373").unwrap().template, "sub. has obj. as their sibling");
        assert_eq!(reg.get("P22").unwrap().template, "The father of sub. is obj.");
        assert_eq!(reg.get("P17").unwrap().name, "country");
    }

    #[test]
    fn missing_object_placeholder_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reg.json");
        std::fs::write(
            &path,
            r#"[{"id":"P1","name":"a","template":"sub. is fine obj."},{"id":"P2","name":"b","template":"sub. has nothing"}]"#,
        )
        .unwrap();
        let err = load_registry(&path).unwrap_err();
        assert!(matches!(err, RegistryError::MissingPlaceholder { ref id, placeholder: "obj." } if id == "P2"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let rel = RelationType::new("P1", "a", "sub. x obj.");
        assert!(matches!(
            Registry::new(vec![rel.clone(), rel]),
            Err(RegistryError::DuplicateId(_))
        ));
    }

    #[test]
    fn premise_concatenation() {
        assert_eq!(
            verbalize_premise(&proposal("David Lean", "worked for", "London Films")),
            "David Lean worked for London Films."
        );
        assert_eq!(verbalize_premise(&proposal("A", "is", "B")), "A is B.");
        assert_eq!(
            verbalize_premise(&proposal("New York City", "is in", "USA")),
            "New York City is in USA."
        );
    }

    #[test]
    fn hypothesis_substitution() {
        let reg = Registry::builtin();
        assert_eq!(
            verbalize_hypothesis(reg.get("P17").unwrap(), "Berlin", "Germany"),
            "The sovereign state of this item Berlin is Germany."
        );
        assert_eq!(verbalize_hypothesis(reg.get("P22").unwrap(), "X", "Y"), "The father of X is Y.");
        assert_eq!(
            verbalize_hypothesis(reg.get("P3373").unwrap(), "Ann", "Bo"),
            "Ann has Bo as their sibling"
        );
    }

    #[test]
    fn substitution_is_single_pass() {
        let rel = RelationType::new("P1", "r", "sub. likes obj.");
        assert_eq!(verbalize_hypothesis(&rel, "obj.", "sub."), "obj. likes sub.");
        assert_eq!(verbalize_hypothesis(&rel, "sub.", "x"), "sub. likes x.");
    }

    #[test]
    fn repeated_placeholders_all_substituted() {
        let reg = Registry::builtin();
        let s = verbalize_hypothesis(reg.get("P576").unwrap(), "Acme", "1999");
        assert_eq!(
            s,
            "The date or point in time on which the organization Acme was dissolved/disappeared or the building Acme demolished is 1999."
        );
    }

    #[test]
    fn full_registry_gives_192_hypotheses() {
        let reg = Registry::builtin();
        let hyps = enumerate_hypotheses(&proposal("David Lean", "worked for", "London Films"), &reg);
        assert_eq!(hyps.len(), 192);
        for (i, pair) in hyps.chunks(2).enumerate() {
            assert_eq!(pair[0].relation_index, i);
            assert_eq!(pair[0].direction, Direction::Forward);
            assert_eq!(pair[1].direction, Direction::Inverse);
            assert_eq!(pair[0].relation_id, pair[1].relation_id);
        }
    }

    #[test]
    fn single_type_registry() {
        let reg = Registry::builtin().restricted(&["P26"]).unwrap();
        let hyps = enumerate_hypotheses(&proposal("Ann", "married", "Bo"), &reg);
        assert_eq!(hyps.len(), 2);
        assert_eq!(hyps[0].sentence, "The spouse of Ann is Bo.");
        assert_eq!(hyps[1].sentence, "The spouse of Bo is Ann.");
    }

    #[test]
    fn type_constraints() {
        let reg = Registry::builtin();
        assert!(reg.check_type_constraint("P19", Person, Location).unwrap());
        assert!(!reg.check_type_constraint("P19", Organization, Location).unwrap());
        assert!(!reg.check_type_constraint("P17", Time, Time).unwrap());
        assert!(matches!(
            reg.check_type_constraint("P0", Person, Person),
            Err(RegistryError::UnknownRelation(_))
        ));
        let free = RelationType::new("P1", "x", "sub. x obj.");
        for s in EntityType::ALL {
            for o in EntityType::ALL {
                assert!(free.admits(s, o));
            }
        }
    }

    #[test]
    fn direct_name_lookup_normalizes() {
        let reg = Registry::builtin();
        assert_eq!(reg.by_name("Country ").unwrap().id, "P17");
        assert_eq!(reg.by_name("place  of birth").unwrap().id, "P19");
        assert!(reg.by_name("worked for").is_none());
    }

    #[test]
    fn constraint_override_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"[{"id":"P19","subject_types":["ORG"],"object_types":[]}]"#).unwrap();
        let reg = Registry::builtin().with_constraints_file(&path).unwrap();
        assert!(reg.check_type_constraint("P19", Organization, Time).unwrap());
        assert!(!reg.check_type_constraint("P19", Person, Location).unwrap());
    }

    #[test]
    fn derived_constraints_match_brute_force_scan() {
        let corpus = crate::corpus::parse_corpus(crate::corpus::tests::fixture_json(), &Registry::builtin()).unwrap();
        let derived = derive_type_constraints(&corpus);
        assert_eq!(derived.len(), 1);
        assert_eq!(derived[0].id, "P108");
        assert_eq!(derived[0].subject_types, BTreeSet::from([Person]));
        assert_eq!(derived[0].object_types, BTreeSet::from([Organization]));
    }

    fn type_set() -> impl Strategy<Value = BTreeSet<EntityType>> {
        proptest::collection::btree_set(proptest::sample::select(EntityType::ALL.to_vec()), 0..4)
    }

    proptest! {
        #[test]
        fn inverse_equals_swapped_forward(idx in 0usize..96, a in "[A-Za-z ]{1,12}", b in "[A-Za-z ]{1,12}") {
            let reg = Registry::builtin();
            let hyps = hypotheses_for(&a, &b, &reg);
            let swapped = hypotheses_for(&b, &a, &reg);
            prop_assert_eq!(&hyps[2 * idx + 1].sentence, &swapped[2 * idx].sentence);
            prop_assert!(hyps[2 * idx].sentence.contains(a.as_str()));
            prop_assert!(hyps[2 * idx].sentence.contains(b.as_str()));
        }

        #[test]
        fn enlarging_constraint_sets_is_monotone(
            subj in type_set(), obj in type_set(), extra_s in type_set(), extra_o in type_set(),
            s in proptest::sample::select(EntityType::ALL.to_vec()),
            o in proptest::sample::select(EntityType::ALL.to_vec()),
        ) {
            let mut rel = RelationType::new("P1", "x", "sub. x obj.");
            rel.subject_types = subj.clone();
            rel.object_types = obj.clone();
            let before = rel.admits(s, o);
            // only enlarge non-empty sets; an empty set already admits everything
            if !subj.is_empty() { rel.subject_types.extend(extra_s); }
            if !obj.is_empty() { rel.object_types.extend(extra_o); }
            prop_assert!(!before || rel.admits(s, o));
        }
    }
}
