//! Mapping free-form proposals onto the predefined relation inventory.
//!
//! A proposal whose relation phrase already names a registry relation is
//! taken as is. Otherwise the proposal becomes an NLI premise and is scored
//! against every forward and inverse hypothesis; among the candidates whose
//! entity types fit the relation, the single best one is kept if its fused
//! score clears the threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::proposer::ProposalTriple;
use crate::registry::{enumerate_hypotheses, verbalize_hypothesis, verbalize_premise, Direction, Hypothesis, Registry};
use crate::scorer::{NliPair, ScorerGateway};

pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("threshold must lie strictly between -1 and 1, got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub threshold: f64,
    pub apply_type_constraints: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            threshold: DEFAULT_THRESHOLD,
            apply_type_constraints: true,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if !(self.threshold > -1.0 && self.threshold < 1.0) {
            return Err(AlignError::Threshold(self.threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Relation phrase named a registry relation.
    Direct,
    /// Chosen by entailment scoring.
    Nli,
}

/// A proposal resolved to a registry relation. Serialized as one line of
/// the candidate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedTriple {
    #[serde(rename = "title")]
    pub doc_title: String,
    pub h: usize,
    pub t: usize,
    pub r: String,
    /// Fused entailment score; 1.0 for direct matches.
    #[serde(rename = "score")]
    pub fused_score: f64,
    pub provenance: Provenance,
    pub premise: String,
    #[serde(rename = "hypothesis")]
    pub chosen_hypothesis: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlignOutcome {
    Aligned(AlignedTriple),
    /// Best admissible score did not exceed the threshold.
    BelowThreshold { best: Option<f64> },
    /// At least one hypothesis could not be scored.
    Unscored { reason: String },
}

/// Relation whose name equals the proposal's relation phrase, ignoring case and spacing.
pub fn direct_match<'r>(proposal: &ProposalTriple, registry: &'r Registry) -> Option<&'r str> {
    registry
        .by_name(&proposal.relation_phrase)
        .map(|rel| rel.id.as_str())
}

/// Index of the winning hypothesis: constraint filter, then argmax (first
/// wins on ties, which means lower registry index and forward before
/// inverse), then the strict threshold.
pub fn select_hypothesis(
    hypotheses: &[Hypothesis],
    fused: &[f64],
    threshold: f64,
    admissible: impl Fn(&Hypothesis) -> bool,
) -> (Option<usize>, Option<f64>) {
    let mut best: Option<usize> = None;
    for (i, h) in hypotheses.iter().enumerate() {
        if !admissible(h) {
            continue;
        }
        if best.is_none_or(|b| fused[i] > fused[b]) {
            best = Some(i);
        }
    }
    let best_score = best.map(|b| fused[b]);
    (best.filter(|&b| fused[b] > threshold), best_score)
}

fn entity_names(p: &ProposalTriple) -> Vec<String> {
    vec![p.subject_surface.clone(), p.object_surface.clone()]
}

pub async fn align(
    proposal: &ProposalTriple,
    doc: &Document,
    registry: &Registry,
    scorer: &ScorerGateway,
    config: &AlignConfig,
) -> AlignOutcome {
    let (subject, object) = proposal
        .linked()
        .expect("align expects proposals linked to the document");
    let premise = verbalize_premise(proposal);

    if let Some(id) = direct_match(proposal, registry) {
        let rel = registry.get(id).expect("matched id is registered");
        return AlignOutcome::Aligned(AlignedTriple {
            doc_title: doc.title.clone(),
            h: subject,
            t: object,
            r: id.to_string(),
            fused_score: 1.0,
            provenance: Provenance::Direct,
            premise,
            chosen_hypothesis: verbalize_hypothesis(rel, &proposal.subject_surface, &proposal.object_surface),
        });
    }

    let hypotheses = enumerate_hypotheses(proposal, registry);
    let entities = entity_names(proposal);
    let pairs: Vec<NliPair> = hypotheses
        .iter()
        .map(|h| NliPair::new(premise.clone(), h.sentence.clone()).with_entities(entities.clone()))
        .collect();
    let mut fused = Vec::with_capacity(pairs.len());
    for result in scorer.score_batch(&pairs).await {
        match result {
            Ok(s) => fused.push(s.fused),
            Err(e) => return AlignOutcome::Unscored { reason: e.reason },
        }
    }

    let subject_type = doc.vertex_set[subject].entity_type();
    let object_type = doc.vertex_set[object].entity_type();
    let admissible = |h: &Hypothesis| {
        if !config.apply_type_constraints {
            return true;
        }
        let rel = &registry.relations()[h.relation_index];
        match h.direction {
            Direction::Forward => rel.admits(subject_type, object_type),
            Direction::Inverse => rel.admits(object_type, subject_type),
        }
    };
    let (winner, best) = select_hypothesis(&hypotheses, &fused, config.threshold, admissible);
    let Some(i) = winner else {
        return AlignOutcome::BelowThreshold { best };
    };
    let h = &hypotheses[i];
    let (head, tail) = match h.direction {
        Direction::Forward => (subject, object),
        Direction::Inverse => (object, subject),
    };
    AlignOutcome::Aligned(AlignedTriple {
        doc_title: doc.title.clone(),
        h: head,
        t: tail,
        r: h.relation_id.clone(),
        fused_score: fused[i],
        provenance: Provenance::Nli,
        premise,
        chosen_hypothesis: h.sentence.clone(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentAlignment {
    /// New triples, one per `(h, t, r)`, sorted by `(h, t, r)`.
    pub triples: Vec<AlignedTriple>,
    pub unscored: Vec<(ProposalTriple, String)>,
    pub below_threshold: usize,
    /// Aligned triples dropped because the document already has them.
    pub already_labeled: usize,
}

/// Aligns every proposal of one document; keeps the best-scored triple per
/// `(h, t, r)` and drops triples the document already carries.
pub async fn align_document(
    proposals: &[ProposalTriple],
    doc: &Document,
    registry: &Registry,
    scorer: &ScorerGateway,
    config: &AlignConfig,
) -> DocumentAlignment {
    let outcomes = futures::future::join_all(proposals.iter().map(|p| align(p, doc, registry, scorer, config))).await;
    let mut out = DocumentAlignment::default();
    let mut best: BTreeMap<(usize, usize, String), AlignedTriple> = BTreeMap::new();
    for (p, outcome) in proposals.iter().zip(outcomes) {
        match outcome {
            AlignOutcome::Aligned(t) => {
                if doc.has_label(t.h, t.t, &t.r) {
                    out.already_labeled += 1;
                    continue;
                }
                let key = (t.h, t.t, t.r.clone());
                match best.get(&key) {
                    Some(prev) if prev.fused_score >= t.fused_score => {}
                    _ => {
                        best.insert(key, t);
                    }
                }
            }
            AlignOutcome::BelowThreshold { .. } => out.below_threshold += 1,
            AlignOutcome::Unscored { reason } => {
                log::warn!("document `{}`: proposal line {} unscored: {reason}", doc.title, p.line_index);
                out.unscored.push((p.clone(), reason));
            }
        }
    }
    out.triples = best.into_values().collect();
    out
}
