//! Capability-aware dataset curation.
//!
//! Tags instruction-tuning data with cognition/domain/task capability
//! triplets, scores labeled datasets with coverage and balance metrics,
//! and selects training subsets with reproducible, seeded algorithms:
//!
//! * [`taxonomy`] - the canonical label space and canonicalization.
//! * [`corpus`] - JSONL ingestion, annotations, composite extraction.
//! * [`tagging`] - pluggable tagger backends with retry, rate limiting,
//!   and checkpointed batch annotation.
//! * [`metrics`] - coverage, balance, and distribution comparison.
//! * [`selection`] - diversity-driven and capability-oriented selection.
//! * [`cli`] - the `cdt` command-line entry point.

pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod selection;
pub mod tagging;
pub mod taxonomy;

#[cfg(test)]
pub(crate) mod testutil;

pub use corpus::{
    Annotation, CompositeMultiset, Corpus, CorpusError, Expansion, IngestOptions, IngestOutcome,
    LabeledCorpus, Record, DEFAULT_VALIDATION_CAP,
};
pub use metrics::{
    balance, coverage, distribution_compare, evaluate_dataset, EvaluationReport, LogBase,
    MetricsError,
};
pub use selection::{
    decompose, select_general, select_specific, selection_report, CapabilityKeySets,
    DimensionMask, SelectionError, SelectionParams, SelectionResult, SelectionStage,
    SelectionTarget,
};
pub use taxonomy::{
    CapabilityLabel, CompositeTriplet, Dimension, Taxonomy, TaxonomyError, BUNDLED_TAXONOMY,
};
