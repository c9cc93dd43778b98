//! Diversity-driven and capability-oriented subset selection.
//!
//! Both selectors are strictly sequential over a snapshot of the pool and
//! consume randomness from a single seeded generator in a documented order,
//! so runs are replayable:
//!
//! * Keys are visited in a fixed order (descending matching-record count,
//!   ties broken by key ordering).
//! * One `random_range(0..|candidates|)` draw is consumed per pick, even
//!   when only one candidate remains.
//! * Candidate lists and the fill pool are kept in pool (record) order;
//!   fill removes the drawn element in place, preserving order.
//!
//! Identical (pool, params) inputs therefore produce identical results,
//! and a reimplementation following the same discipline reproduces the
//! exact pick sequence from the seed alone.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Annotation, CorpusError, Expansion, LabeledCorpus};
use crate::metrics::{
    dimension_marginals, distribution_compare, DistributionComparison, FrequencyRow,
    FrequencyTable, MetricsError,
};
use crate::taxonomy::CompositeTriplet;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("selection pool is empty")]
    EmptyPool,

    #[error("validation corpus is empty")]
    EmptyValid,

    #[error("target size must be >= 1 (got {0})")]
    TargetZero(usize),

    #[error("target ratio must lie in (0, 1], got {0}")]
    RatioOutOfRange(f64),

    #[error("dimension mask must keep at least one dimension")]
    EmptyMask,

    #[error("capability-oriented selection requires all three dimensions (no mask)")]
    MaskUnsupported,

    #[error(transparent)]
    Corpus(#[from] CorpusError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Requested subset size: an absolute count or a fraction of the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionTarget {
    Count(usize),
    Ratio(f64),
}

impl SelectionTarget {
    /// Resolves to an absolute size against the pool; ratios round up.
    pub fn resolve(self, pool_len: usize) -> Result<usize, SelectionError> {
        match self {
            SelectionTarget::Count(n) => {
                if n == 0 {
                    Err(SelectionError::TargetZero(0))
                } else {
                    Ok(n)
                }
            }
            SelectionTarget::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(SelectionError::RatioOutOfRange(r));
                }
                let n = (r * pool_len as f64).ceil() as usize;
                Ok(n.max(1))
            }
        }
    }
}

/// Which dimensions participate in composite keys. Masked-out dimensions
/// are collapsed to a wildcard, so e.g. a cognition-only mask selects for
/// diversity over cognition tags alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionMask {
    pub cognition: bool,
    pub domain: bool,
    pub task: bool,
}

impl Default for DimensionMask {
    fn default() -> Self {
        Self {
            cognition: true,
            domain: true,
            task: true,
        }
    }
}

impl DimensionMask {
    pub fn is_full(self) -> bool {
        self.cognition && self.domain && self.task
    }

    pub fn is_empty(self) -> bool {
        !(self.cognition || self.domain || self.task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionParams {
    pub target: SelectionTarget,
    pub seed: u64,
    pub expansion: Expansion,
    pub mask: DimensionMask,
}

impl SelectionParams {
    pub fn new(target: SelectionTarget, seed: u64) -> Self {
        Self {
            target,
            seed,
            expansion: Expansion::default(),
            mask: DimensionMask::default(),
        }
    }
}

/// Which matching stage produced a pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStage {
    General,
    Triplet,
    Binary,
    Unary,
    Fill,
}

impl SelectionStage {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStage::General => "general",
            SelectionStage::Triplet => "triplet",
            SelectionStage::Binary => "binary",
            SelectionStage::Unary => "unary",
            SelectionStage::Fill => "fill",
        }
    }
}

/// One selected record with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPick {
    pub id: String,
    pub stage: SelectionStage,
    /// The key the record was picked for ("-" for fill picks).
    pub key: String,
}

/// Ordered, reproducible selection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub picks: Vec<SelectionPick>,
    /// |distinct composites of selection| / |distinct composites of pool|.
    pub achieved_r: f64,
    pub stage_counts: BTreeMap<SelectionStage, usize>,
    pub pool_distinct: usize,
    pub selection_distinct: usize,
    pub seed: u64,
    pub expansion: Expansion,
}

impl SelectionResult {
    pub fn ids(&self) -> Vec<&str> {
        self.picks.iter().map(|p| p.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    /// Materializes the selected records as a corpus, in pick order.
    pub fn materialize(&self, pool: &LabeledCorpus) -> Result<LabeledCorpus, SelectionError> {
        Ok(pool.subset_by_ids(self.picks.iter().map(|p| p.id.as_str()))?)
    }
}

/// A possibly-masked composite key. `None` marks a masked-out dimension.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct CompositeKey {
    cognition: Option<String>,
    domain: Option<String>,
    task: Option<String>,
}

impl fmt::Display for CompositeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let star = "*".to_string();
        write!(
            f,
            "{}|{}|{}",
            self.cognition.as_ref().unwrap_or(&star),
            self.domain.as_ref().unwrap_or(&star),
            self.task.as_ref().unwrap_or(&star),
        )
    }
}

/// Distinct masked keys of one record, in tag order.
fn record_keys(annotation: &Annotation, expansion: Expansion, mask: DimensionMask) -> Vec<CompositeKey> {
    let mut keys = Vec::new();
    for triplet in annotation.composites(expansion) {
        let key = CompositeKey {
            cognition: mask.cognition.then_some(triplet.cognition),
            domain: mask.domain.then_some(triplet.domain),
            task: mask.task.then_some(triplet.task),
        };
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys
}

/// Round-robin sweep shared by both selectors.
///
/// Visits `ordered` keys cyclically; for each key with remaining candidates
/// draws one uniformly at random, marks it selected, and records the pick.
/// Stops when `n` picks exist overall or a full sweep makes no progress.
#[allow(clippy::too_many_arguments)]
fn sweep_rounds<K: Ord + fmt::Display>(
    ordered: &[K],
    candidates: &mut BTreeMap<K, Vec<usize>>,
    selected: &mut [bool],
    picks: &mut Vec<SelectionPick>,
    pool: &LabeledCorpus,
    stage: SelectionStage,
    n: usize,
    rng: &mut ChaCha8Rng,
) {
    loop {
        let mut progressed = false;
        for key in ordered {
            if picks.len() == n {
                return;
            }
            let list = candidates.get_mut(key).expect("key built upfront");
            list.retain(|&idx| !selected[idx]);
            if list.is_empty() {
                continue;
            }
            let j = rng.random_range(0..list.len());
            let idx = list[j];
            selected[idx] = true;
            picks.push(SelectionPick {
                id: pool.entries()[idx].0.id.clone(),
                stage,
                key: key.to_string(),
            });
            progressed = true;
        }
        if picks.len() == n || !progressed {
            return;
        }
    }
}

/// Orders keys by descending candidate count, ties broken by key ordering.
fn order_keys<K: Ord + Clone>(candidates: &BTreeMap<K, Vec<usize>>) -> Vec<K> {
    let mut ordered: Vec<K> = candidates.keys().cloned().collect();
    ordered.sort_by(|a, b| {
        candidates[b]
            .len()
            .cmp(&candidates[a].len())
            .then_with(|| a.cmp(b))
    });
    ordered
}

/// Diversity-driven selection over the pool's own composite set.
///
/// Extracts the distinct composites of the pool, orders them by descending
/// pool count, then sweeps the ordered list round-robin, picking one random
/// matching record per composite per sweep and retiring picked records
/// entirely. Runs until the target size is reached or the pool is
/// exhausted, returning min(N, |pool|) records.
pub fn select_general(
    pool: &LabeledCorpus,
    params: &SelectionParams,
) -> Result<SelectionResult, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    if params.mask.is_empty() {
        return Err(SelectionError::EmptyMask);
    }
    let n = params.target.resolve(pool.len())?;

    let per_record: Vec<Vec<CompositeKey>> = pool
        .entries()
        .iter()
        .map(|(_, a)| record_keys(a, params.expansion, params.mask))
        .collect();
    let mut candidates: BTreeMap<CompositeKey, Vec<usize>> = BTreeMap::new();
    for (idx, keys) in per_record.iter().enumerate() {
        for key in keys {
            candidates.entry(key.clone()).or_default().push(idx);
        }
    }
    let pool_distinct = candidates.len();
    let ordered = order_keys(&candidates);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut selected = vec![false; pool.len()];
    let mut picks = Vec::new();
    sweep_rounds(
        &ordered,
        &mut candidates,
        &mut selected,
        &mut picks,
        pool,
        SelectionStage::General,
        n,
        &mut rng,
    );

    Ok(finish(picks, pool_distinct, &per_record, &selected, params))
}

/// Triplet key with the same "c|d|t" provenance format as the other
/// stage keys. Ordering follows the inner triplet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct TripletKey(CompositeTriplet);

impl fmt::Display for TripletKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.0.cognition, self.0.domain, self.0.task)
    }
}

/// Typed binary projection of a composite triplet. Ordering is the variant
/// order, then lexicographic on the label names; this is the documented
/// tie-break for stage sorting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PairKey {
    CognitionDomain(String, String),
    CognitionTask(String, String),
    DomainTask(String, String),
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairKey::CognitionDomain(c, d) => write!(f, "{c}|{d}|*"),
            PairKey::CognitionTask(c, t) => write!(f, "{c}|*|{t}"),
            PairKey::DomainTask(d, t) => write!(f, "*|{d}|{t}"),
        }
    }
}

/// Typed unary projection of a composite triplet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SingleKey {
    Cognition(String),
    Domain(String),
    Task(String),
}

impl fmt::Display for SingleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SingleKey::Cognition(c) => write!(f, "{c}|*|*"),
            SingleKey::Domain(d) => write!(f, "*|{d}|*"),
            SingleKey::Task(t) => write!(f, "*|*|{t}"),
        }
    }
}

/// A validation set's triplets plus their binary and unary projections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityKeySets {
    pub triplets: BTreeSet<CompositeTriplet>,
    pub pairs: BTreeSet<PairKey>,
    pub singles: BTreeSet<SingleKey>,
}

/// Projects every triplet onto its three binary pairs and three single
/// dimensions, deduplicated.
pub fn decompose(triplets: &BTreeSet<CompositeTriplet>) -> CapabilityKeySets {
    let mut pairs = BTreeSet::new();
    let mut singles = BTreeSet::new();
    for t in triplets {
        pairs.insert(PairKey::CognitionDomain(t.cognition.clone(), t.domain.clone()));
        pairs.insert(PairKey::CognitionTask(t.cognition.clone(), t.task.clone()));
        pairs.insert(PairKey::DomainTask(t.domain.clone(), t.task.clone()));
        singles.insert(SingleKey::Cognition(t.cognition.clone()));
        singles.insert(SingleKey::Domain(t.domain.clone()));
        singles.insert(SingleKey::Task(t.task.clone()));
    }
    CapabilityKeySets {
        triplets: triplets.clone(),
        pairs,
        singles,
    }
}

fn record_matches_pair(triplets: &[CompositeTriplet], key: &PairKey) -> bool {
    triplets.iter().any(|t| match key {
        PairKey::CognitionDomain(c, d) => &t.cognition == c && &t.domain == d,
        PairKey::CognitionTask(c, k) => &t.cognition == c && &t.task == k,
        PairKey::DomainTask(d, k) => &t.domain == d && &t.task == k,
    })
}

fn record_matches_single(triplets: &[CompositeTriplet], key: &SingleKey) -> bool {
    triplets.iter().any(|t| match key {
        SingleKey::Cognition(c) => &t.cognition == c,
        SingleKey::Domain(d) => &t.domain == d,
        SingleKey::Task(k) => &t.task == k,
    })
}

/// Capability-oriented selection against a validation set.
///
/// Builds the validation set's triplet keys and their decomposition, then
/// selects in strict stage order: exact triplets, binary pairs, single
/// dimensions, and finally a uniform random fill from whatever remains.
/// Within each stage, keys are sorted once (at stage entry) by descending
/// count of matching records still in the pool and swept round-robin.
///
/// The validation corpus is expected to be pre-capped (see
/// [`LabeledCorpus::cap_validation`]).
pub fn select_specific(
    pool: &LabeledCorpus,
    valid: &LabeledCorpus,
    params: &SelectionParams,
) -> Result<SelectionResult, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    if valid.is_empty() {
        return Err(SelectionError::EmptyValid);
    }
    if !params.mask.is_full() {
        return Err(SelectionError::MaskUnsupported);
    }
    let n = params.target.resolve(pool.len())?;

    let per_record: Vec<Vec<CompositeTriplet>> = pool
        .entries()
        .iter()
        .map(|(_, a)| {
            let mut triplets = a.composites(params.expansion);
            triplets.dedup();
            triplets
        })
        .collect();

    let valid_triplets: BTreeSet<CompositeTriplet> = valid
        .composites(params.expansion)
        .counts()
        .keys()
        .cloned()
        .collect();
    let key_sets = decompose(&valid_triplets);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut selected = vec![false; pool.len()];
    let mut picks = Vec::new();

    // Stage 1: exact triplets.
    run_stage(
        key_sets.triplets.iter().cloned().map(TripletKey),
        |triplets, key| triplets.contains(&key.0),
        &per_record,
        &mut selected,
        &mut picks,
        pool,
        SelectionStage::Triplet,
        n,
        &mut rng,
    );
    // Stage 2: binary pairs.
    run_stage(
        key_sets.pairs.iter().cloned(),
        record_matches_pair,
        &per_record,
        &mut selected,
        &mut picks,
        pool,
        SelectionStage::Binary,
        n,
        &mut rng,
    );
    // Stage 3: single dimensions.
    run_stage(
        key_sets.singles.iter().cloned(),
        record_matches_single,
        &per_record,
        &mut selected,
        &mut picks,
        pool,
        SelectionStage::Unary,
        n,
        &mut rng,
    );

    // Final fill: uniform without replacement from the remaining pool.
    if picks.len() < n {
        let mut remaining: Vec<usize> = (0..pool.len()).filter(|&i| !selected[i]).collect();
        while picks.len() < n && !remaining.is_empty() {
            let j = rng.random_range(0..remaining.len());
            let idx = remaining.remove(j);
            selected[idx] = true;
            picks.push(SelectionPick {
                id: pool.entries()[idx].0.id.clone(),
                stage: SelectionStage::Fill,
                key: "-".to_string(),
            });
        }
    }

    // R for the specific selector is over full composite triplets.
    let mut keyed: Vec<Vec<CompositeKey>> = Vec::with_capacity(per_record.len());
    for triplets in &per_record {
        keyed.push(
            triplets
                .iter()
                .map(|t| CompositeKey {
                    cognition: Some(t.cognition.clone()),
                    domain: Some(t.domain.clone()),
                    task: Some(t.task.clone()),
                })
                .collect(),
        );
    }
    let pool_distinct = keyed.iter().flatten().collect::<BTreeSet<_>>().len();
    Ok(finish(picks, pool_distinct, &keyed, &selected, params))
}

#[allow(clippy::too_many_arguments)]
fn run_stage<K, I, M>(
    keys: I,
    matches: M,
    per_record: &[Vec<CompositeTriplet>],
    selected: &mut [bool],
    picks: &mut Vec<SelectionPick>,
    pool: &LabeledCorpus,
    stage: SelectionStage,
    n: usize,
    rng: &mut ChaCha8Rng,
) where
    K: Ord + Clone + fmt::Display,
    I: Iterator<Item = K>,
    M: Fn(&[CompositeTriplet], &K) -> bool,
{
    if picks.len() == n {
        return;
    }
    // Candidate lists against the pool remaining at stage entry, in pool
    // order. Keys with no matches stay in the rotation but never pick.
    let mut candidates: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for key in keys {
        let list = (0..per_record.len())
            .filter(|&idx| !selected[idx] && matches(&per_record[idx], &key))
            .collect();
        candidates.insert(key, list);
    }
    let ordered = order_keys(&candidates);
    sweep_rounds(&ordered, &mut candidates, selected, picks, pool, stage, n, rng);
}

/// Computes R and stage counts for a finished pick list.
fn finish(
    picks: Vec<SelectionPick>,
    pool_distinct: usize,
    per_record: &[Vec<CompositeKey>],
    selected: &[bool],
    params: &SelectionParams,
) -> SelectionResult {
    let selection_distinct = per_record
        .iter()
        .zip(selected)
        .filter(|(_, &sel)| sel)
        .flat_map(|(keys, _)| keys)
        .collect::<BTreeSet<_>>()
        .len();
    let mut stage_counts = BTreeMap::new();
    for pick in &picks {
        *stage_counts.entry(pick.stage).or_insert(0) += 1;
    }
    SelectionResult {
        picks,
        achieved_r: if pool_distinct == 0 {
            0.0
        } else {
            selection_distinct as f64 / pool_distinct as f64
        },
        stage_counts,
        pool_distinct,
        selection_distinct,
        seed: params.seed,
        expansion: params.expansion,
    }
}

/// Summary of one selection run, suitable for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub selected: usize,
    pub achieved_r: f64,
    pub pool_distinct: usize,
    pub selection_distinct: usize,
    pub stage_counts: BTreeMap<SelectionStage, usize>,
    pub seed: u64,
    pub expansion: Expansion,
    pub selection_distribution: Vec<FrequencyTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison_to_valid: Option<DistributionComparison>,
}

/// Builds the summary document for a finished selection: R, stage counts,
/// the selection's per-dimension distribution, and (when a validation set
/// is given) the distribution comparison against it.
pub fn selection_report(
    result: &SelectionResult,
    pool: &LabeledCorpus,
    valid: Option<&LabeledCorpus>,
) -> Result<SelectionReport, SelectionError> {
    let selection = result.materialize(pool)?;
    let selection_distribution = dimension_marginals(&selection)
        .into_iter()
        .map(|(dimension, counts)| {
            let total: u64 = counts.values().sum();
            let rows = counts
                .into_iter()
                .map(|(label, count)| FrequencyRow {
                    label,
                    count,
                    frequency: if total > 0 { count as f64 / total as f64 } else { 0.0 },
                })
                .collect();
            FrequencyTable { dimension, rows }
        })
        .collect();
    let comparison_to_valid = match valid {
        Some(valid) => Some(distribution_compare(&selection, valid)?),
        None => None,
    };
    Ok(SelectionReport {
        selected: result.len(),
        achieved_r: result.achieved_r,
        pool_distinct: result.pool_distinct,
        selection_distinct: result.selection_distinct,
        stage_counts: result.stage_counts.clone(),
        seed: result.seed,
        expansion: result.expansion,
        selection_distribution,
        comparison_to_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{annotation, labeled_corpus, record, synthetic_taxonomy};

    fn params(n: usize, seed: u64) -> SelectionParams {
        SelectionParams::new(SelectionTarget::Count(n), seed)
    }

    #[test]
    fn target_resolution() {
        assert_eq!(SelectionTarget::Count(5).resolve(100).unwrap(), 5);
        assert_eq!(SelectionTarget::Ratio(0.2).resolve(100).unwrap(), 20);
        assert_eq!(SelectionTarget::Ratio(0.05).resolve(270).unwrap(), 14); // ceil(13.5)
        assert_eq!(SelectionTarget::Ratio(1.0).resolve(7).unwrap(), 7);
        assert!(SelectionTarget::Count(0).resolve(10).is_err());
        assert!(SelectionTarget::Ratio(0.0).resolve(10).is_err());
        assert!(SelectionTarget::Ratio(1.5).resolve(10).is_err());
    }

    /// Pool of 5 records over composites A:3, B:1, C:1; N = 3 must take one
    /// record from each composite.
    #[test]
    fn general_spreads_across_composites() {
        let t = synthetic_taxonomy(3, 1, 1);
        let lc = labeled_corpus(
            &t,
            &[
                ("a1", &["C0"], "D0", "T0"),
                ("a2", &["C0"], "D0", "T0"),
                ("a3", &["C0"], "D0", "T0"),
                ("b1", &["C1"], "D0", "T0"),
                ("c1", &["C2"], "D0", "T0"),
            ],
        );
        let result = select_general(&lc, &params(3, 11)).unwrap();
        assert_eq!(result.len(), 3);
        let keys: BTreeSet<&str> = result.picks.iter().map(|p| p.key.as_str()).collect();
        assert_eq!(keys.len(), 3, "{:?}", result.picks);
        assert_eq!(result.selection_distinct, 3);
        assert_eq!(result.achieved_r, 1.0);
    }

    #[test]
    fn general_exhausts_small_pools() {
        let t = synthetic_taxonomy(3, 1, 1);
        let lc = labeled_corpus(
            &t,
            &[
                ("a1", &["C0"], "D0", "T0"),
                ("a2", &["C0"], "D0", "T0"),
                ("a3", &["C0"], "D0", "T0"),
                ("b1", &["C1"], "D0", "T0"),
                ("c1", &["C2"], "D0", "T0"),
            ],
        );
        let result = select_general(&lc, &params(5, 3)).unwrap();
        assert_eq!(result.len(), 5);
        let mut ids = result.ids();
        ids.sort();
        assert_eq!(ids, vec!["a1", "a2", "a3", "b1", "c1"]);

        // N beyond the pool still returns the whole pool.
        let result = select_general(&lc, &params(100, 3)).unwrap();
        assert_eq!(result.len(), 5);
    }

    /// One composite holds 90% of records; N = |T_d| covers every distinct
    /// composite exactly once.
    #[test]
    fn general_covers_all_composites_despite_skew() {
        let t = synthetic_taxonomy(10, 1, 1);
        let mut lc = LabeledCorpus::new(t.version().to_string());
        for i in 0..90 {
            let id = format!("big{i}");
            lc.attach(record(&id, &id), annotation(&["C0"], "D0", "T0"), &t).unwrap();
        }
        for c in 1..10 {
            let id = format!("small{c}");
            let tag = format!("C{c}");
            lc.attach(record(&id, &id), annotation(&[tag.as_str()], "D0", "T0"), &t)
                .unwrap();
        }
        let result = select_general(&lc, &params(10, 5)).unwrap();
        assert_eq!(result.len(), 10);
        assert_eq!(result.selection_distinct, 10);
        assert_eq!(result.achieved_r, 1.0);
        let keys: BTreeSet<&str> = result.picks.iter().map(|p| p.key.as_str()).collect();
        assert_eq!(keys.len(), 10);
    }

    #[test]
    fn general_is_deterministic_per_seed_and_varies_across_seeds() {
        let t = synthetic_taxonomy(4, 2, 2);
        let mut lc = LabeledCorpus::new(t.version().to_string());
        for i in 0..60 {
            let c = format!("C{}", i % 4);
            let d = format!("D{}", i % 2);
            let tk = format!("T{}", (i / 2) % 2);
            lc.attach(
                record(&format!("r{i}"), &format!("inst {i}")),
                annotation(&[c.as_str()], &d, &tk),
                &t,
            )
            .unwrap();
        }
        let a = select_general(&lc, &params(20, 42)).unwrap();
        let b = select_general(&lc, &params(20, 42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let c = select_general(&lc, &params(20, 43)).unwrap();
        assert_ne!(a.ids(), c.ids());
    }

    #[test]
    fn general_respects_dimension_mask() {
        let t = synthetic_taxonomy(2, 2, 1);
        // Four records over (C, D) combinations; cognition-only mask means
        // only 2 distinct keys exist.
        let lc = labeled_corpus(
            &t,
            &[
                ("r0", &["C0"], "D0", "T0"),
                ("r1", &["C0"], "D1", "T0"),
                ("r2", &["C1"], "D0", "T0"),
                ("r3", &["C1"], "D1", "T0"),
            ],
        );
        let mut p = params(2, 9);
        p.mask = DimensionMask {
            cognition: true,
            domain: false,
            task: false,
        };
        let result = select_general(&lc, &p).unwrap();
        assert_eq!(result.pool_distinct, 2);
        assert_eq!(result.selection_distinct, 2);
        let keys: Vec<&str> = result.picks.iter().map(|p| p.key.as_str()).collect();
        assert!(keys.contains(&"C0|*|*") && keys.contains(&"C1|*|*"), "{keys:?}");
    }

    #[test]
    fn decompose_single_triplet() {
        let mut triplets = BTreeSet::new();
        triplets.insert(CompositeTriplet::new("c1", "d1", "t1"));
        let sets = decompose(&triplets);
        assert_eq!(sets.pairs.len(), 3);
        assert_eq!(sets.singles.len(), 3);
        assert!(sets
            .pairs
            .contains(&PairKey::CognitionDomain("c1".into(), "d1".into())));
        assert!(sets
            .pairs
            .contains(&PairKey::CognitionTask("c1".into(), "t1".into())));
        assert!(sets
            .pairs
            .contains(&PairKey::DomainTask("d1".into(), "t1".into())));
    }

    #[test]
    fn decompose_shared_coordinates() {
        let mut triplets = BTreeSet::new();
        triplets.insert(CompositeTriplet::new("c1", "d1", "t1"));
        triplets.insert(CompositeTriplet::new("c1", "d2", "t1"));
        let sets = decompose(&triplets);
        // (c1,d1),(c1,t1),(d1,t1),(c1,d2),(d2,t1)
        assert_eq!(sets.pairs.len(), 5);
        // c1, d1, d2, t1
        assert_eq!(sets.singles.len(), 4);
        assert!(sets.pairs.len() <= 3 * sets.triplets.len());
    }

    #[test]
    fn specific_stage_mix_matches_fixture() {
        let t = synthetic_taxonomy(4, 4, 4);
        // Validation wants (C0, D0, T0).
        let valid = labeled_corpus(&t, &[("v1", &["C0"], "D0", "T0")]);
        // Pool: 2 exact matches, 3 pair-only matches, 20 unrelated.
        let mut rows: Vec<(String, Vec<&'static str>, &'static str, &'static str)> = vec![
            ("exact1".into(), vec!["C0"], "D0", "T0"),
            ("exact2".into(), vec!["C0"], "D0", "T0"),
            ("pair1".into(), vec!["C0"], "D0", "T1"), // (c,d) match
            ("pair2".into(), vec!["C0"], "D1", "T0"), // (c,t) match
            ("pair3".into(), vec!["C1"], "D0", "T0"), // (d,t) match
        ];
        for i in 0..20 {
            rows.push((format!("far{i}"), vec!["C3"], "D3", "T3"));
        }
        let mut pool = LabeledCorpus::new(t.version().to_string());
        for (id, cogs, d, tk) in &rows {
            pool.attach(record(id, id), annotation(cogs, d, tk), &t).unwrap();
        }

        let result = select_specific(&pool, &valid, &params(4, 17)).unwrap();
        assert_eq!(result.len(), 4);
        assert_eq!(result.stage_counts.get(&SelectionStage::Triplet), Some(&2));
        assert_eq!(result.stage_counts.get(&SelectionStage::Binary), Some(&2));
        assert_eq!(result.stage_counts.get(&SelectionStage::Fill), None);
        let ids = result.ids();
        assert!(ids.contains(&"exact1") && ids.contains(&"exact2"));
    }

    #[test]
    fn specific_all_triplet_when_pool_is_rich() {
        let t = synthetic_taxonomy(3, 3, 3);
        let valid = labeled_corpus(
            &t,
            &[("v1", &["C0"], "D0", "T0"), ("v2", &["C1"], "D1", "T1")],
        );
        let mut pool = LabeledCorpus::new(t.version().to_string());
        for i in 0..10 {
            let (c, d, tk) = if i % 2 == 0 { ("C0", "D0", "T0") } else { ("C1", "D1", "T1") };
            pool.attach(record(&format!("r{i}"), &format!("x{i}")), annotation(&[c], d, tk), &t)
                .unwrap();
        }
        let result = select_specific(&pool, &valid, &params(6, 3)).unwrap();
        assert_eq!(result.len(), 6);
        assert!(result
            .picks
            .iter()
            .all(|p| p.stage == SelectionStage::Triplet));
    }

    #[test]
    fn specific_falls_back_to_fill_when_pool_unrelated() {
        let t = synthetic_taxonomy(3, 3, 3);
        let valid = labeled_corpus(&t, &[("v1", &["C0"], "D0", "T0")]);
        let mut pool = LabeledCorpus::new(t.version().to_string());
        for i in 0..10 {
            pool.attach(
                record(&format!("r{i}"), &format!("x{i}")),
                annotation(&["C2"], "D2", "T2"),
                &t,
            )
            .unwrap();
        }
        let result = select_specific(&pool, &valid, &params(5, 23)).unwrap();
        assert_eq!(result.len(), 5);
        assert!(result.picks.iter().all(|p| p.stage == SelectionStage::Fill));
        assert_eq!(result.stage_counts.get(&SelectionStage::Fill), Some(&5));
    }

    #[test]
    fn specific_rejects_masked_params() {
        let t = synthetic_taxonomy(2, 2, 2);
        let valid = labeled_corpus(&t, &[("v", &["C0"], "D0", "T0")]);
        let pool = labeled_corpus(&t, &[("p", &["C0"], "D0", "T0")]);
        let mut p = params(1, 1);
        p.mask.task = false;
        assert!(matches!(
            select_specific(&pool, &valid, &p),
            Err(SelectionError::MaskUnsupported)
        ));
    }

    #[test]
    fn selection_report_shapes() {
        let t = synthetic_taxonomy(2, 2, 2);
        let pool = labeled_corpus(
            &t,
            &[
                ("p1", &["C0"], "D0", "T0"),
                ("p2", &["C1"], "D1", "T1"),
                ("p3", &["C0"], "D1", "T0"),
            ],
        );
        let result = select_general(&pool, &params(1, 5)).unwrap();
        assert_eq!(result.len(), 1);
        let counts: usize = result.stage_counts.values().sum();
        assert_eq!(counts, 1);

        let report = selection_report(&result, &pool, Some(&pool)).unwrap();
        assert_eq!(report.selected, 1);
        let cmp = report.comparison_to_valid.unwrap();
        for dim in &cmp.dimensions {
            assert!(dim.tv_distance.is_finite());
        }
    }

    #[test]
    fn general_near_uniform_pick_counts() {
        // With N >= |T_d|, pick counts per key differ by at most 1 among
        // keys that still have unselected matching records.
        let t = synthetic_taxonomy(3, 1, 1);
        let mut pool = LabeledCorpus::new(t.version().to_string());
        let sizes = [12usize, 7, 3];
        for (c, &count) in sizes.iter().enumerate() {
            for i in 0..count {
                pool.attach(
                    record(&format!("r{c}_{i}"), &format!("x{c}{i}")),
                    annotation(&[format!("C{c}").as_str()], "D0", "T0"),
                    &t,
                )
                .unwrap();
            }
        }
        let result = select_general(&pool, &params(15, 77)).unwrap();
        assert_eq!(result.len(), 15);
        let mut picked: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &result.picks {
            *picked.entry(p.key.as_str()).or_insert(0) += 1;
        }
        // Keys with records left over: compare pairwise.
        let leftovers: Vec<(&str, usize)> = vec![
            ("C0|D0|T0", sizes[0]),
            ("C1|D0|T0", sizes[1]),
            ("C2|D0|T0", sizes[2]),
        ]
        .into_iter()
        .filter(|(k, total)| picked.get(k).copied().unwrap_or(0) < *total)
        .collect();
        for (a, _) in &leftovers {
            for (b, _) in &leftovers {
                let ca = picked.get(a).copied().unwrap_or(0) as i64;
                let cb = picked.get(b).copied().unwrap_or(0) as i64;
                assert!((ca - cb).abs() <= 1, "{a}={ca} vs {b}={cb}");
            }
        }
    }
}
