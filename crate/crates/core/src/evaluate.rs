//! Exact-match scoring of predicted triples against a reference corpus.
//!
//! A prediction counts as correct when `(title, h, t, r)` appears in the
//! gold set; evidence is ignored. Scores are micro-averaged and reported as
//! percentages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TripleKey};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("recall on an empty subset is undefined")]
    EmptySubset,
    #[error("prediction refers to unknown document `{0}`")]
    UnknownTitle(String),
    #[error("prediction ({h}, {t}) in `{title}` refers to a missing entity")]
    UnknownEntity { title: String, h: usize, t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        Prf {
            precision,
            recall,
            f1: f1_from_pr(precision, recall),
            tp,
            predicted,
            gold,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, both in percent; 0 when both are 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Prf,
    pub per_relation: BTreeMap<String, Prf>,
    /// Recall restricted to named gold subsets, e.g. the added triples.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subset_recalls: BTreeMap<String, f64>,
}

pub fn exact_match_prf(predictions: &BTreeSet<TripleKey>, gold: &BTreeSet<TripleKey>) -> EvalReport {
    let tp = predictions.intersection(gold).count();
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for p in predictions {
        let c = counts.entry(&p.r).or_default();
        c.1 += 1;
        if gold.contains(p) {
            c.0 += 1;
        }
    }
    for g in gold {
        counts.entry(&g.r).or_default().2 += 1;
    }
    EvalReport {
        overall: Prf::from_counts(tp, predictions.len(), gold.len()),
        per_relation: counts
            .into_iter()
            .map(|(r, (tp, p, g))| (r.to_string(), Prf::from_counts(tp, p, g)))
            .collect(),
        subset_recalls: BTreeMap::new(),
    }
}

/// [`exact_match_prf`] against a corpus, after checking every prediction
/// names a document and entities that exist.
pub fn evaluate(predictions: &BTreeSet<TripleKey>, gold: &Corpus) -> Result<EvalReport, EvalError> {
    let sizes: BTreeMap<&str, usize> = gold
        .documents
        .iter()
        .map(|d| (d.title.as_str(), d.vertex_set.len()))
        .collect();
    for p in predictions {
        let n = *sizes
            .get(p.title.as_str())
            .ok_or_else(|| EvalError::UnknownTitle(p.title.clone()))?;
        if p.h >= n || p.t >= n {
            return Err(EvalError::UnknownEntity {
                title: p.title.clone(),
                h: p.h,
                t: p.t,
            });
        }
    }
    Ok(exact_match_prf(predictions, &gold.triple_keys()))
}

/// Percentage of `subset` found among `predictions`.
pub fn recall_on_subset(predictions: &BTreeSet<TripleKey>, subset: &BTreeSet<TripleKey>) -> Result<f64, EvalError> {
    if subset.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    Ok(ratio(subset.intersection(predictions).count(), subset.len()))
}

/// Two decimals, halves rounded away from zero.
pub fn format_percent(value: f64) -> String {
    // Decimal text of the shortest round-trip repr avoids binary artefacts like 2.675 -> 2.67.
    let text = format!("{value}");
    let (neg, digits) = match text.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, text.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    let mut frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    frac.resize(frac.len().max(3), 0);
    let mut cents: u128 = int_part.parse::<u128>().unwrap_or(0) * 100 + (frac[0] * 10 + frac[1]) as u128;
    if frac[2] >= 5 {
        cents += 1;
    }
    let sign = if neg && cents > 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents / 100, cents % 100)
}

pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}", "relation", "P", "R", "F1", "tp", "pred", "gold");
    let mut row = |name: &str, m: &Prf| {
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}",
            name,
            format_percent(m.precision),
            format_percent(m.recall),
            format_percent(m.f1),
            m.tp,
            m.predicted,
            m.gold
        );
    };
    for (r, m) in &report.per_relation {
        row(r, m);
    }
    row("overall", &report.overall);
    for (name, recall) in &report.subset_recalls {
        let _ = writeln!(out, "recall on {name}: {}", format_percent(*recall));
    }
    out
}

#[derive(Deserialize)]
struct PredictionLine {
    title: String,
    h: usize,
    t: usize,
    r: String,
}

/// Reads predictions from JSON Lines with at least `title`, `h`, `t`, `r` per line.
/// Candidate files written by the pipeline qualify.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<BTreeSet<TripleKey>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_predictions(&text).map_err(|(line, message)| EvalError::Parse {
        path: path.display().to_string(),
        line,
        message,
    })
}

pub fn parse_predictions(text: &str) -> Result<BTreeSet<TripleKey>, (usize, String)> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
        out.insert(TripleKey::new(p.title, p.h, p.t, p.r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(t: &str, h: usize, tl: usize, r: &str) -> TripleKey {
        TripleKey::new(t, h, tl, r)
    }

    #[test]
    fn counts_and_percentages() {
        let gold: BTreeSet<_> = [key("A", 0, 1, "P17"), key("A", 1, 0, "P17"), key("B", 0, 1, "P131"), key("B", 1, 2, "P131")]
            .into();
        let pred: BTreeSet<_> = [key("A", 0, 1, "P17"), key("B", 0, 1, "P131"), key("B", 0, 1, "P17")].into();
        let r = exact_match_prf(&pred, &gold);
        assert_eq!((r.overall.tp, r.overall.predicted, r.overall.gold), (2, 3, 4));
        assert!((r.overall.precision - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.overall.recall, 50.0);
        assert!((r.overall.f1 - 400.0 / 7.0).abs() < 1e-12);
        assert_eq!(r.per_relation["P17"].tp, 1);
        assert_eq!(r.per_relation["P17"].predicted, 2);
        assert_eq!(r.per_relation["P131"].recall, 50.0);
    }

    #[test]
    fn empty_inputs() {
        let r = exact_match_prf(&BTreeSet::new(), &BTreeSet::new());
        assert_eq!(r.overall.f1, 0.0);
        assert!(matches!(recall_on_subset(&BTreeSet::new(), &BTreeSet::new()), Err(EvalError::EmptySubset)));
    }

    #[test]
    fn subset_recall() {
        let subset: BTreeSet<_> = [key("A", 0, 1, "P17"), key("A", 2, 1, "P17")].into();
        let pred: BTreeSet<_> = [key("A", 0, 1, "P17")].into();
        assert_eq!(recall_on_subset(&pred, &subset).unwrap(), 50.0);
    }

    #[test]
    fn half_up_rendering() {
        assert_eq!(format_percent(2.675), "2.68");
        assert_eq!(format_percent(2.665), "2.67");
        assert_eq!(format_percent(16.0875), "16.09");
        assert_eq!(format_percent(100.0), "100.00");
        assert_eq!(format_percent(0.004), "0.00");
        assert_eq!(format_percent(-1.005), "-1.01");
        assert_eq!(format_percent(99.995), "100.00");
        assert_eq!(format_percent(1e-7), "0.00");
    }

    #[test]
    fn predictions_must_exist_in_the_corpus() {
        let gold = crate::corpus::parse_corpus(crate::corpus::tests::fixture_json(), &crate::registry::Registry::builtin()).unwrap();
        let ok: BTreeSet<_> = [key("Lean", 0, 1, "P108")].into();
        assert_eq!(evaluate(&ok, &gold).unwrap().overall.f1, 100.0);
        assert!(matches!(evaluate(&[key("X", 0, 1, "P108")].into(), &gold), Err(EvalError::UnknownTitle(_))));
        assert!(matches!(evaluate(&[key("Lean", 0, 7, "P108")].into(), &gold), Err(EvalError::UnknownEntity { .. })));
    }

    #[test]
    fn prediction_lines() {
        let text = "{\"title\":\"A\",\"h\":0,\"t\":1,\"r\":\"P17\",\"score\":0.9}\n\n{\"title\":\"A\",\"h\":0,\"t\":1,\"r\":\"P17\"}\n";
        assert_eq!(parse_predictions(text).unwrap().len(), 1);
        assert_eq!(parse_predictions("{\"title\":\"A\"}").unwrap_err().0, 1);
    }

    proptest! {
        #[test]
        fn f1_lies_between_min_and_max(p in 0.0f64..100.0, r in 0.0f64..100.0) {
            let f = f1_from_pr(p, r);
            prop_assert!(f >= p.min(r) - 1e-9 && f <= p.max(r) + 1e-9);
        }

        #[test]
        fn monotone_in_correct_predictions(
            gold in prop::collection::btree_set((0usize..4, 0usize..4, 0usize..3), 1..12),
            pred in prop::collection::btree_set((0usize..4, 0usize..4, 0usize..3), 0..12),
            extra in (0usize..4, 0usize..4, 0usize..3),
        ) {
            let k = |(h, t, r): (usize, usize, usize)| key("D", h, t, ["P17", "P131", "P150"][r]);
            let gold: BTreeSet<_> = gold.into_iter().map(k).collect();
            let pred: BTreeSet<_> = pred.into_iter().map(k).collect();
            let before = exact_match_prf(&pred, &gold).overall;
            let mut more = pred.clone();
            more.insert(k(extra));
            let after = exact_match_prf(&more, &gold).overall;
            if gold.contains(&k(extra)) {
                prop_assert!(after.precision >= before.precision - 1e-9);
                prop_assert!(after.recall >= before.recall);
                prop_assert!(after.f1 >= before.f1 - 1e-9);
            } else {
                prop_assert!(after.recall <= before.recall);
            }
            let report = exact_match_prf(&pred, &gold);
            prop_assert_eq!(report.per_relation.values().map(|m| m.tp).sum::<usize>(), report.overall.tp);
            prop_assert!(report.overall.tp <= report.overall.predicted.min(report.overall.gold));
            prop_assert_eq!(recall_on_subset(&pred, &gold).unwrap(), report.overall.recall);
        }

        #[test]
        fn perfect_predictions_score_full(n in 1usize..20) {
            let gold: BTreeSet<_> = (0..n).map(|i| key("D", i, i + 1, "P17")).collect();
            let r = exact_match_prf(&gold, &gold);
            prop_assert_eq!(r.overall.f1, 100.0);
        }
    }
}
