//! Straight-line reimplementations used as references. They read the data
//! files directly and share no code with the library beyond std and serde_json.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde_json::{json, Value};
use unicode_normalization::UnicodeNormalization;

pub const THRESHOLD: f64 = 0.6;

pub fn load_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

pub struct Rel {
    pub id: String,
    pub name: String,
    pub template: String,
    pub subject_types: BTreeSet<String>,
    pub object_types: BTreeSet<String>,
}

/// Relation table with the constraint file laid over it.
pub fn relations(relations: &Path, constraints: &Path) -> Vec<Rel> {
    let strings = |v: &Value| -> BTreeSet<String> {
        v.as_array()
            .map(|a| a.iter().map(|s| s.as_str().unwrap().to_string()).collect())
            .unwrap_or_default()
    };
    let overrides: HashMap<String, (BTreeSet<String>, BTreeSet<String>)> = load_json(constraints)
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            (
                c["id"].as_str().unwrap().to_string(),
                (strings(&c["subject_types"]), strings(&c["object_types"])),
            )
        })
        .collect();
    load_json(relations)
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            let id = r["id"].as_str().unwrap().to_string();
            let (subject_types, object_types) = overrides
                .get(&id)
                .cloned()
                .unwrap_or_else(|| (strings(&r["subject_types"]), strings(&r["object_types"])));
            Rel {
                name: r["name"].as_str().unwrap().to_string(),
                template: r["template"].as_str().unwrap().to_string(),
                id,
                subject_types,
                object_types,
            }
        })
        .collect()
}

fn admits(set: &BTreeSet<String>, ty: &str) -> bool {
    set.is_empty() || set.contains(ty)
}

pub fn surface_key(s: &str) -> String {
    let lowered: String = s.nfc().collect::<String>().to_lowercase();
    let mut s = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let quotes = ['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];
    loop {
        let next = s.trim_matches(&quotes[..]).trim_end_matches('.').trim().to_string();
        if next == s {
            return s;
        }
        s = next;
    }
}

/// Entity type by majority vote over mentions, earliest type on ties.
pub fn entity_type(entity: &Value) -> String {
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for m in entity.as_array().unwrap() {
        let ty = m["type"].as_str().unwrap().to_string();
        if !counts.contains_key(&ty) {
            order.push(ty.clone());
        }
        *counts.entry(ty).or_default() += 1;
    }
    let mut best = order[0].clone();
    for ty in &order[1..] {
        if counts[ty] > counts[&best] {
            best = ty.clone();
        }
    }
    best
}

fn words(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.nfc().collect::<String>().to_lowercase())
        .collect()
}

/// Fused score of the lexical mock: `J - (1 - J)` with J the Jaccard
/// overlap of the word sets once entity words are removed.
pub fn lexical_fused(premise: &str, hypothesis: &str, entities: &[&str]) -> f64 {
    let masked: BTreeSet<String> = entities.iter().flat_map(|e| words(e)).collect();
    let a: BTreeSet<String> = words(premise).difference(&masked).cloned().collect();
    let b: BTreeSet<String> = words(hypothesis).difference(&masked).cloned().collect();
    let union = a.union(&b).count();
    let j = if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    };
    j - (1.0 - j)
}

pub fn fill(template: &str, subject: &str, object: &str) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < template.len() {
        let rest = &template[i..];
        if rest.starts_with("sub.") {
            out += subject;
            i += 4;
        } else if rest.starts_with("obj.") {
            out += object;
            i += 4;
        } else {
            let c = rest.chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    if (template.ends_with("sub.") || template.ends_with("obj.")) && !out.ends_with('.') {
        out.push('.');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// `(h, t, relation id, fused score, direct?)`
    Aligned(usize, usize, String, f64, bool),
    Below,
}

pub struct Proposal<'a> {
    pub subject: &'a str,
    pub relation: &'a str,
    pub object: &'a str,
    pub s: usize,
    pub o: usize,
}

/// Enumerate all 192 statements, drop type-inadmissible ones, take the
/// first maximum, then apply the strict threshold.
pub fn align(p: &Proposal, doc: &Value, rels: &[Rel]) -> (Verdict, usize) {
    let phrase = p.relation.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if let Some(r) = rels.iter().find(|r| r.name.to_lowercase() == phrase) {
        return (Verdict::Aligned(p.s, p.o, r.id.clone(), 1.0, true), 0);
    }
    let premise = format!("{} {} {}.", p.subject, p.relation, p.object);
    let st = entity_type(&doc["vertexSet"][p.s]);
    let ot = entity_type(&doc["vertexSet"][p.o]);
    let mut scored = Vec::new();
    for r in rels {
        let fwd = fill(&r.template, p.subject, p.object);
        let inv = fill(&r.template, p.object, p.subject);
        let ents = [p.subject, p.object];
        scored.push((r, false, lexical_fused(&premise, &fwd, &ents), admits(&r.subject_types, &st) && admits(&r.object_types, &ot)));
        scored.push((r, true, lexical_fused(&premise, &inv, &ents), admits(&r.subject_types, &ot) && admits(&r.object_types, &st)));
    }
    assert_eq!(scored.len(), 192);
    let admissible: Vec<_> = scored.iter().filter(|x| x.3).collect();
    let Some(top) = admissible.iter().map(|x| x.2).reduce(f64::max) else {
        return (Verdict::Below, 0);
    };
    let ties = admissible.iter().filter(|x| x.2 == top).count();
    let winner = admissible.iter().find(|x| x.2 == top).unwrap();
    if top <= THRESHOLD {
        return (Verdict::Below, ties);
    }
    let (h, t) = if winner.1 { (p.o, p.s) } else { (p.s, p.o) };
    (Verdict::Aligned(h, t, winner.0.id.clone(), top, false), ties)
}

/// Splits one response line into a triple, or `None` if it is not one.
pub fn parse_line(line: &str) -> Option<[String; 3]> {
    let mut body = line.trim();
    let digits = body.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && body[digits..].starts_with(['.', ')']) {
        body = body[digits + 1..].trim();
    } else if let Some(rest) = body.strip_prefix("- ") {
        body = rest.trim();
    }
    let body = body.trim_end_matches(['.', ',', ';']);
    let inner = body
        .strip_prefix('(')
        .and_then(|b| b.strip_suffix(')'))
        .or_else(|| body.strip_prefix('<').and_then(|b| b.strip_suffix('>')))?;
    let parts: Vec<String> = inner
        .split(',')
        .map(|p| {
            let p = p.trim();
            p.strip_prefix('"').and_then(|q| q.strip_suffix('"')).unwrap_or(p).trim().to_string()
        })
        .collect();
    if parts.len() != 3 || parts.iter().any(String::is_empty) {
        return None;
    }
    Some([parts[0].clone(), parts[1].clone(), parts[2].clone()])
}

#[derive(Debug, Default, PartialEq)]
pub struct Totals {
    pub proposals: usize,
    pub aligned: usize,
    pub direct: usize,
    pub below_threshold: usize,
    pub already_labeled: usize,
}

/// Whole pipeline on a corpus with scripted responses: parse, link, dedup,
/// align, keep the best triple per key, merge. Returns the merged corpus.
pub fn pipeline(corpus: &Value, script: &Value, rels: &[Rel]) -> (Value, Totals) {
    let mut merged = corpus.clone();
    let mut totals = Totals::default();
    for doc in merged.as_array_mut().unwrap() {
        let title = doc["title"].as_str().unwrap().to_string();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, entity) in doc["vertexSet"].as_array().unwrap().iter().enumerate() {
            for m in entity.as_array().unwrap() {
                index.entry(surface_key(m["name"].as_str().unwrap())).or_insert(i);
            }
        }
        let existing: BTreeSet<(usize, usize, String)> = doc["labels"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| (l["h"].as_u64().unwrap() as usize, l["t"].as_u64().unwrap() as usize, l["r"].as_str().unwrap().to_string()))
            .collect();

        let mut seen = BTreeSet::new();
        let mut best: BTreeMap<(usize, usize, String), (f64, bool)> = BTreeMap::new();
        for answer in script[&title].as_array().into_iter().flatten() {
            for line in answer.as_str().unwrap().lines() {
                let Some([s, r, o]) = parse_line(line) else { continue };
                let (Some(&si), Some(&oi)) = (index.get(&surface_key(&s)), index.get(&surface_key(&o))) else {
                    continue;
                };
                let rkey = r.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
                if si == oi || !seen.insert((si, rkey, oi)) {
                    continue;
                }
                totals.proposals += 1;
                let p = Proposal {
                    subject: &s,
                    relation: &r,
                    object: &o,
                    s: si,
                    o: oi,
                };
                match align(&p, doc, rels).0 {
                    Verdict::Below => totals.below_threshold += 1,
                    Verdict::Aligned(h, t, id, score, direct) => {
                        let key = (h, t, id);
                        if existing.contains(&key) {
                            totals.already_labeled += 1;
                        } else if best.get(&key).is_none_or(|(prev, _)| score > *prev) {
                            best.insert(key, (score, direct));
                        }
                    }
                }
            }
        }
        totals.aligned += best.len();
        totals.direct += best.values().filter(|(_, d)| *d).count();
        let labels = doc["labels"].as_array_mut().unwrap();
        for (h, t, r) in best.into_keys() {
            labels.push(json!({ "h": h, "t": t, "r": r, "evidence": [] }));
        }
    }
    (merged, totals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Final {
    Accept,
    Reject,
}

#[derive(Debug, PartialEq, Eq)]
pub enum TaskResult {
    Unanimous(Final),
    Adjudicated(Final),
    Conflicted,
    Open,
}

/// One decision: `(timestamp, annotator, is_adjudicator, verdict)` with
/// `None` meaning skip.
pub type Dec = (u64, String, bool, Option<Final>);

/// The 2+1 rule on one task's decisions.
pub fn two_plus_one(decisions: &[Dec]) -> TaskResult {
    let mut ordered: Vec<&Dec> = decisions.iter().collect();
    ordered.sort_by_key(|d| d.0);
    let votes: Vec<Final> = ordered.iter().filter(|d| !d.2).filter_map(|d| d.3).collect();
    let tiebreak = ordered.iter().find(|d| d.2 && d.3.is_some()).and_then(|d| d.3);
    if votes.len() < 2 {
        return TaskResult::Open;
    }
    if votes[0] == votes[1] {
        return TaskResult::Unanimous(votes[0]);
    }
    match tiebreak.or(votes.get(2).copied()) {
        Some(v) => TaskResult::Adjudicated(v),
        None => TaskResult::Conflicted,
    }
}
