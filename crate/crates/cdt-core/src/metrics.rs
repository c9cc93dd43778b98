//! Dataset-level capability metrics: coverage, balance, and per-dimension
//! distribution reports.
//!
//! Everything here is a pure function over immutable inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CompositeMultiset, Expansion, LabeledCorpus};
use crate::taxonomy::{Dimension, Taxonomy};

/// Logarithm base used for entropy values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

impl LogBase {
    fn apply(self, x: f64) -> f64 {
        match self {
            LogBase::Nats => x.ln(),
            LogBase::Bits => x.log2(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Nats => "nats",
            LogBase::Bits => "bits",
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "e" | "nats" | "ln" => Ok(LogBase::Nats),
            "2" | "bits" | "log2" => Ok(LogBase::Bits),
            other => Err(format!("unknown log base {other:?} (expected \"e\" or \"2\")")),
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("composite {triplet} is not part of the active taxonomy")]
    ForeignComposite { triplet: String },

    #[error("corpus was labeled with taxonomy {found:?} but metrics use {expected:?}")]
    VersionMismatch { expected: String, found: String },
}

/// Fraction of the full composite space present in the multiset.
///
/// Returns `|distinct composites| / |C|*|D|*|T|`; an empty multiset scores 0.
pub fn coverage(multiset: &CompositeMultiset, taxonomy: &Taxonomy) -> Result<f64, MetricsError> {
    for triplet in multiset.counts().keys() {
        if !taxonomy.contains_triplet(triplet) {
            return Err(MetricsError::ForeignComposite {
                triplet: triplet.to_string(),
            });
        }
    }
    if multiset.is_empty() {
        return Ok(0.0);
    }
    Ok(multiset.distinct() as f64 / taxonomy.composite_space_size() as f64)
}

/// Shannon entropy of the empirical distribution over composite triplets.
///
/// `-sum p(t) log p(t)` with `p(t) = count(t) / total`. Natural log by
/// default; pass [`LogBase::Bits`] for base 2. An empty multiset is defined
/// as 0 (with a warning, since it usually signals an upstream mistake).
pub fn balance(multiset: &CompositeMultiset, base: LogBase) -> f64 {
    if multiset.is_empty() {
        tracing::warn!("balance of an empty composite multiset is defined as 0");
        return 0.0;
    }
    let total = multiset.total() as f64;
    multiset
        .counts()
        .values()
        .map(|&count| {
            let p = count as f64 / total;
            -p * base.apply(p)
        })
        .sum()
}

/// Per-dimension marginal frequencies of a labeled corpus.
///
/// Cognition counts every tag a record carries; domain and task count once
/// per record.
pub fn dimension_marginals(corpus: &LabeledCorpus) -> BTreeMap<Dimension, BTreeMap<String, u64>> {
    let mut marginals: BTreeMap<Dimension, BTreeMap<String, u64>> = BTreeMap::new();
    for dim in Dimension::ALL {
        marginals.insert(dim, BTreeMap::new());
    }
    for (_, annotation) in corpus.entries() {
        let cog = marginals.get_mut(&Dimension::Cognition).unwrap();
        for tag in &annotation.cognition {
            *cog.entry(tag.clone()).or_insert(0) += 1;
        }
        *marginals
            .get_mut(&Dimension::Domain)
            .unwrap()
            .entry(annotation.domain.clone())
            .or_insert(0) += 1;
        *marginals
            .get_mut(&Dimension::Task)
            .unwrap()
            .entry(annotation.task.clone())
            .or_insert(0) += 1;
    }
    marginals
}

/// Frequency table for one dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub dimension: Dimension,
    pub rows: Vec<FrequencyRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub label: String,
    pub count: u64,
    pub frequency: f64,
}

/// Capability metrics for one labeled dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub taxonomy_version: String,
    pub expansion: Expansion,
    pub log_base: LogBase,
    pub records: usize,
    pub total_composites: u64,
    pub distinct_composites: usize,
    pub coverage: f64,
    pub balance: f64,
    /// Toolkit extension (not part of the metric definitions): balance
    /// divided by the maximum entropy ln(distinct_composites), for
    /// cross-dataset readability.
    pub balance_normalized: f64,
    pub frequency_tables: Vec<FrequencyTable>,
    pub notes: Vec<String>,
}

/// Computes coverage, balance, and per-dimension marginals for a corpus.
pub fn evaluate_dataset(
    dataset: &str,
    corpus: &LabeledCorpus,
    taxonomy: &Taxonomy,
    expansion: Expansion,
    base: LogBase,
) -> Result<EvaluationReport, MetricsError> {
    if corpus.taxonomy_version() != taxonomy.version() {
        return Err(MetricsError::VersionMismatch {
            expected: taxonomy.version().to_string(),
            found: corpus.taxonomy_version().to_string(),
        });
    }
    report_from_parts(
        dataset,
        taxonomy,
        expansion,
        base,
        corpus.len(),
        &corpus.composites(expansion),
        &dimension_marginals(corpus),
    )
}

/// Builds an [`EvaluationReport`] from pre-aggregated parts. Lets callers
/// stream large corpora without holding the records in memory.
pub fn report_from_parts(
    dataset: &str,
    taxonomy: &Taxonomy,
    expansion: Expansion,
    base: LogBase,
    records: usize,
    multiset: &CompositeMultiset,
    marginals: &BTreeMap<Dimension, BTreeMap<String, u64>>,
) -> Result<EvaluationReport, MetricsError> {
    let coverage = coverage(multiset, taxonomy)?;
    let balance_nats = balance(multiset, LogBase::Nats);
    let balance_out = match base {
        LogBase::Nats => balance_nats,
        LogBase::Bits => balance(multiset, LogBase::Bits),
    };
    let distinct = multiset.distinct();
    let balance_normalized = if distinct >= 2 {
        balance_nats / (distinct as f64).ln()
    } else {
        0.0
    };

    let frequency_tables = marginals
        .iter()
        .map(|(&dimension, counts)| {
            let total: u64 = counts.values().sum();
            let rows = counts
                .iter()
                .map(|(label, &count)| FrequencyRow {
                    label: label.clone(),
                    count,
                    frequency: if total > 0 { count as f64 / total as f64 } else { 0.0 },
                })
                .collect();
            FrequencyTable { dimension, rows }
        })
        .collect();

    Ok(EvaluationReport {
        dataset: dataset.to_string(),
        taxonomy_version: taxonomy.version().to_string(),
        expansion,
        log_base: base,
        records,
        total_composites: multiset.total(),
        distinct_composites: distinct,
        coverage,
        balance: balance_out,
        balance_normalized,
        frequency_tables,
        notes: vec![
            "balance_normalized is a toolkit extension: balance (nats) / ln(distinct_composites)"
                .to_string(),
        ],
    })
}

/// Side-by-side relative frequencies of two corpora in one dimension, plus
/// their total-variation distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionComparison {
    pub dimension: Dimension,
    pub rows: Vec<ComparisonRow>,
    pub tv_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub freq_a: f64,
    pub freq_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub taxonomy_version: String,
    pub dimensions: Vec<DimensionComparison>,
}

/// Compares the per-dimension label distributions of two corpora.
///
/// Emits, per dimension, the relative frequencies in `a` and `b` over the
/// union of observed labels and the total-variation distance
/// `0.5 * sum |p_a - p_b|`.
pub fn distribution_compare(
    a: &LabeledCorpus,
    b: &LabeledCorpus,
) -> Result<DistributionComparison, MetricsError> {
    if a.taxonomy_version() != b.taxonomy_version() {
        return Err(MetricsError::VersionMismatch {
            expected: a.taxonomy_version().to_string(),
            found: b.taxonomy_version().to_string(),
        });
    }
    let marginals_a = dimension_marginals(a);
    let marginals_b = dimension_marginals(b);

    let dimensions = Dimension::ALL
        .into_iter()
        .map(|dim| {
            let counts_a = &marginals_a[&dim];
            let counts_b = &marginals_b[&dim];
            let total_a: u64 = counts_a.values().sum();
            let total_b: u64 = counts_b.values().sum();
            let mut labels: Vec<&String> = counts_a.keys().chain(counts_b.keys()).collect();
            labels.sort();
            labels.dedup();

            let mut rows = Vec::with_capacity(labels.len());
            let mut tv = 0.0;
            for label in labels {
                let freq_a = rel(counts_a.get(label), total_a);
                let freq_b = rel(counts_b.get(label), total_b);
                tv += (freq_a - freq_b).abs();
                rows.push(ComparisonRow {
                    label: label.clone(),
                    freq_a,
                    freq_b,
                });
            }
            DimensionComparison {
                dimension: dim,
                rows,
                tv_distance: tv / 2.0,
            }
        })
        .collect();

    Ok(DistributionComparison {
        taxonomy_version: a.taxonomy_version().to_string(),
        dimensions,
    })
}

fn rel(count: Option<&u64>, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        *count.unwrap_or(&0) as f64 / total as f64
    }
}
