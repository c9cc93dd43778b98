//! Shared fixtures and independent oracles for integration tests.
//!
//! The selection oracles below re-implement the two selection procedures
//! directly from their round-robin definitions, sharing nothing with the
//! library except the seeded random stream discipline (one
//! `random_range(0..len)` draw per pick over pool-ordered candidates,
//! order-preserving removal). The metric oracles recount everything from
//! flat expanded lists.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cdt_core::corpus::{Annotation, Expansion, LabeledCorpus, Record};
use cdt_core::taxonomy::Taxonomy;

// ---------------------------------------------------------------------------
// Corpus fixtures
// ---------------------------------------------------------------------------

pub fn synthetic_taxonomy(nc: usize, nd: usize, nt: usize) -> Taxonomy {
    let mut doc = String::from("version = \"synthetic\"\n");
    for i in 0..nc {
        doc.push_str(&format!(
            "[[cognition]]\nname = \"C{i}\"\nabbreviation = \"C{i}A\"\ndefinition = \"c{i}\"\n"
        ));
    }
    for i in 0..nd {
        doc.push_str(&format!(
            "[[domain]]\nname = \"D{i}\"\ngroup = \"G\"\ndefinition = \"d{i}\"\n"
        ));
    }
    for i in 0..nt {
        doc.push_str(&format!("[[task]]\nname = \"T{i}\"\ndefinition = \"t{i}\"\n"));
    }
    Taxonomy::from_toml_str(&doc).unwrap()
}

pub fn record(id: &str, instruction: &str) -> Record {
    Record {
        id: id.to_string(),
        instruction: instruction.to_string(),
        input: None,
        response: None,
        source: None,
    }
}

pub fn annotation(cognition: &[&str], domain: &str, task: &str) -> Annotation {
    Annotation {
        cognition: cognition.iter().map(|s| s.to_string()).collect(),
        cognition_explanations: cognition.iter().map(|s| format!("uses {s}")).collect(),
        domain: domain.to_string(),
        task: task.to_string(),
    }
}

/// Random labeled corpus over a synthetic taxonomy; records carry two
/// cognition tags with probability `two_tag_percent`/100.
pub fn random_labeled_corpus(
    taxonomy: &Taxonomy,
    records: usize,
    seed: u64,
    two_tag_percent: u32,
) -> LabeledCorpus {
    use cdt_core::taxonomy::Dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = taxonomy.len(Dimension::Cognition);
    let nd = taxonomy.len(Dimension::Domain);
    let nt = taxonomy.len(Dimension::Task);
    let mut corpus = LabeledCorpus::new(taxonomy.version().to_string());
    for i in 0..records {
        let c1 = rng.random_range(0..nc);
        let two = nc >= 2 && rng.random_range(0..100) < two_tag_percent;
        let mut cognition = vec![taxonomy.labels(Dimension::Cognition)[c1].name.clone()];
        if two {
            let mut c2 = rng.random_range(0..nc - 1);
            if c2 >= c1 {
                c2 += 1;
            }
            cognition.push(taxonomy.labels(Dimension::Cognition)[c2].name.clone());
        }
        let domain = taxonomy.labels(Dimension::Domain)[rng.random_range(0..nd)]
            .name
            .clone();
        let task = taxonomy.labels(Dimension::Task)[rng.random_range(0..nt)]
            .name
            .clone();
        let cogs: Vec<&str> = cognition.iter().map(|s| s.as_str()).collect();
        corpus
            .attach(
                record(&format!("r{i}"), &format!("instruction {i}")),
                annotation(&cogs, &domain, &task),
                taxonomy,
            )
            .unwrap();
    }
    corpus
}

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

/// Flat list of (c, d, t) occurrences of a corpus under an expansion mode.
pub fn expanded_triplets(corpus: &LabeledCorpus, expansion: Expansion) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for (_, ann) in corpus.entries() {
        let tags: &[String] = match expansion {
            Expansion::AllCognitionTags => &ann.cognition,
            Expansion::FirstCognitionTag => &ann.cognition[..1],
        };
        for tag in tags {
            out.push((tag.clone(), ann.domain.clone(), ann.task.clone()));
        }
    }
    out
}

/// Coverage recomputed from the flat list: distinct / (nc * nd * nt).
pub fn oracle_coverage(expanded: &[(String, String, String)], space: (usize, usize, usize)) -> f64 {
    let distinct: BTreeSet<&(String, String, String)> = expanded.iter().collect();
    distinct.len() as f64 / (space.0 * space.1 * space.2) as f64
}

/// Shannon entropy (nats) recomputed from the flat list.
pub fn oracle_balance(expanded: &[(String, String, String)]) -> f64 {
    if expanded.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&(String, String, String), usize> = HashMap::new();
    for item in expanded {
        *counts.entry(item).or_insert(0) += 1;
    }
    let total = expanded.len() as f64;
    let mut ordered: Vec<usize> = counts.into_values().collect();
    ordered.sort_unstable();
    ordered
        .into_iter()
        .map(|count| {
            let p = count as f64 / total;
            -p * p.ln()
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Selection oracles (pseudocode interpreters)
// ---------------------------------------------------------------------------

/// Minimal record view the oracles operate on.
#[derive(Debug, Clone)]
pub struct OracleRecord {
    pub id: String,
    /// Distinct composites of the record under the chosen expansion.
    pub triplets: Vec<(String, String, String)>,
}

pub fn oracle_pool(corpus: &LabeledCorpus, expansion: Expansion) -> Vec<OracleRecord> {
    corpus
        .entries()
        .iter()
        .map(|(rec, ann)| {
            let tags: &[String] = match expansion {
                Expansion::AllCognitionTags => &ann.cognition,
                Expansion::FirstCognitionTag => &ann.cognition[..1],
            };
            let mut triplets: Vec<(String, String, String)> = tags
                .iter()
                .map(|c| (c.clone(), ann.domain.clone(), ann.task.clone()))
                .collect();
            triplets.dedup();
            OracleRecord {
                id: rec.id.clone(),
                triplets,
            }
        })
        .collect()
}

/// Diversity-driven selection, interpreted line by line: collect the pool's
/// distinct triplets, sort once by descending matching-record count (ties
/// by triplet order), then sweep until N records are taken or a sweep
/// makes no progress.
pub fn oracle_general(pool: &[OracleRecord], n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<OracleRecord> = pool.to_vec();

    let mut counts: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for rec in &remaining {
        for t in &rec.triplets {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    let mut ordered: Vec<(String, String, String)> = counts.keys().cloned().collect();
    ordered.sort_by(|a, b| counts[b].cmp(&counts[a]).then_with(|| a.cmp(b)));

    let mut train: Vec<String> = Vec::new();
    while train.len() < n {
        let mut flag = false;
        for f in &ordered {
            let matching: Vec<usize> = remaining
                .iter()
                .enumerate()
                .filter(|(_, r)| r.triplets.contains(f))
                .map(|(i, _)| i)
                .collect();
            if !matching.is_empty() {
                let j = rng.random_range(0..matching.len());
                let idx = matching[j];
                train.push(remaining[idx].id.clone());
                remaining.remove(idx);
                flag = true;
            }
            if train.len() == n {
                break;
            }
        }
        if !flag {
            break;
        }
    }
    train
}

/// Stage key encodings with the same ordering semantics as the library:
/// pair kinds order (c,d) < (c,t) < (d,t); single kinds c < d < t.
type PairTuple = (u8, String, String);
type SingleTuple = (u8, String);

fn pair_keys(triplets: &BTreeSet<(String, String, String)>) -> BTreeSet<PairTuple> {
    let mut out = BTreeSet::new();
    for (c, d, t) in triplets {
        out.insert((0, c.clone(), d.clone()));
        out.insert((1, c.clone(), t.clone()));
        out.insert((2, d.clone(), t.clone()));
    }
    out
}

fn single_keys(triplets: &BTreeSet<(String, String, String)>) -> BTreeSet<SingleTuple> {
    let mut out = BTreeSet::new();
    for (c, d, t) in triplets {
        out.insert((0, c.clone()));
        out.insert((1, d.clone()));
        out.insert((2, t.clone()));
    }
    out
}

fn matches_pair(rec: &OracleRecord, key: &PairTuple) -> bool {
    rec.triplets.iter().any(|(c, d, t)| match key.0 {
        0 => c == &key.1 && d == &key.2,
        1 => c == &key.1 && t == &key.2,
        _ => d == &key.1 && t == &key.2,
    })
}

fn matches_single(rec: &OracleRecord, key: &SingleTuple) -> bool {
    rec.triplets.iter().any(|(c, d, t)| match key.0 {
        0 => c == &key.1,
        1 => d == &key.1,
        _ => t == &key.1,
    })
}

/// One stage of the capability-oriented selection: sort keys against the
/// current pool, then sweep.
fn oracle_stage<K: Ord + Clone>(
    keys: &BTreeSet<K>,
    matches: impl Fn(&OracleRecord, &K) -> bool,
    remaining: &mut Vec<OracleRecord>,
    train: &mut Vec<(String, String)>,
    stage: &str,
    n: usize,
    rng: &mut ChaCha8Rng,
) {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    for key in keys {
        counts.insert(
            key.clone(),
            remaining.iter().filter(|r| matches(r, key)).count(),
        );
    }
    let mut ordered: Vec<K> = keys.iter().cloned().collect();
    ordered.sort_by(|a, b| counts[b].cmp(&counts[a]).then_with(|| a.cmp(b)));

    while train.len() < n {
        let mut flag = false;
        for key in &ordered {
            if train.len() == n {
                break;
            }
            let matching: Vec<usize> = remaining
                .iter()
                .enumerate()
                .filter(|(_, r)| matches(r, key))
                .map(|(i, _)| i)
                .collect();
            if !matching.is_empty() {
                let j = rng.random_range(0..matching.len());
                let idx = matching[j];
                train.push((remaining[idx].id.clone(), stage.to_string()));
                remaining.remove(idx);
                flag = true;
            }
        }
        if !flag {
            break;
        }
    }
}

/// Capability-oriented selection interpreted stage by stage: exact
/// triplets, binary pairs, single dimensions, then uniform fill.
/// Returns (record id, stage) in pick order.
pub fn oracle_specific(
    pool: &[OracleRecord],
    valid_triplets: &BTreeSet<(String, String, String)>,
    n: usize,
    seed: u64,
) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<OracleRecord> = pool.to_vec();
    let mut train: Vec<(String, String)> = Vec::new();

    oracle_stage(
        valid_triplets,
        |r, key| r.triplets.contains(key),
        &mut remaining,
        &mut train,
        "triplet",
        n,
        &mut rng,
    );
    oracle_stage(
        &pair_keys(valid_triplets),
        matches_pair,
        &mut remaining,
        &mut train,
        "binary",
        n,
        &mut rng,
    );
    oracle_stage(
        &single_keys(valid_triplets),
        matches_single,
        &mut remaining,
        &mut train,
        "unary",
        n,
        &mut rng,
    );

    while train.len() < n && !remaining.is_empty() {
        let j = rng.random_range(0..remaining.len());
        train.push((remaining[j].id.clone(), "fill".to_string()));
        remaining.remove(j);
    }
    train
}
