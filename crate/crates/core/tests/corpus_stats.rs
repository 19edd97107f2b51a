mod common;

use std::collections::BTreeMap;

use common::{corpus5, fixture};
use docaug::corpus::{dataset_stats, diff_triples, load_corpus, CorpusError};
use docaug::registry::{derive_type_constraints, Registry};

#[test]
fn fixture_stats_match_hand_counts() {
    let s = dataset_stats(&corpus5());
    assert_eq!((s.doc_count, s.entity_count, s.triple_count), (5, 22, 12));
    let want: BTreeMap<String, usize> = [
        ("P17", 4),
        ("P19", 1),
        ("P569", 1),
        ("P26", 2),
        ("P571", 1),
        ("P175", 1),
        ("P577", 1),
        ("P403", 1),
    ]
    .into_iter()
    .map(|(r, n)| (r.to_string(), n))
    .collect();
    assert_eq!(s.per_relation, want);
}

#[test]
fn supplementary_diff() {
    let base = corpus5();
    let plus = load_corpus(fixture("corpus5_plus.json"), &Registry::builtin()).unwrap();
    assert_eq!(dataset_stats(&plus).triple_count, 15);
    let diff = diff_triples(&plus, &base).unwrap();
    let got: Vec<_> = diff.iter().map(|(t, g)| (t.as_str(), g.h, g.t, g.r.as_str())).collect();
    assert_eq!(
        got,
        [("Marie Curie", 0, 3, "P108"), ("Nokia", 0, 3, "P159"), ("Abbey Road", 0, 3, "P264")]
    );
    assert!(diff_triples(&base, &plus).unwrap().is_empty());
    assert!(diff_triples(&plus, &plus).unwrap().is_empty());
}

#[test]
fn diff_needs_the_same_documents() {
    let base = corpus5();
    let mut fewer = base.clone();
    fewer.documents.pop();
    assert!(matches!(diff_triples(&base, &fewer), Err(CorpusError::UnmatchedDocument(t)) if t == "Danube"));
}

#[test]
fn derived_constraints_cover_observed_labels() {
    let corpus = corpus5();
    let entries = derive_type_constraints(&corpus);
    assert_eq!(entries.len(), 8);
    let constrained = Registry::builtin().with_constraints(&entries).unwrap();
    for doc in &corpus.documents {
        for l in &doc.labels {
            let ok = constrained
                .check_type_constraint(&l.r, doc.vertex_set[l.h].entity_type(), doc.vertex_set[l.t].entity_type())
                .unwrap();
            assert!(ok, "{} {:?}", doc.title, l);
        }
    }
}
