//! Capability annotation through pluggable tagger backends.
//!
//! A backend is anything that answers a text prompt with a text response
//! (an HTTP completion endpoint, a local model, the built-in stub). This
//! module owns the prompting protocol: candidate labels with definitions
//! in a seed-determined order, dimension-specific tag-count rules, strict
//! JSON output parsing, and retry with fresh label order on failure.
//!
//! Labels that do not resolve against the active taxonomy never leave this
//! module: responses are validated at parse time and again when attached
//! to a corpus.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Annotation, Corpus, CorpusError, LabeledCorpus, Record};
use crate::taxonomy::{Dimension, Taxonomy, TaxonomyError};

/// A text-completion endpoint. Implementations must be stateless from the
/// caller's view and safe to retry.
pub trait TaggerBackend: Send + Sync {
    fn identity(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport failure: {0}")]
    Transport(String),

    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("backend response missing completion text")]
    MissingCompletion,
}

impl BackendError {
    /// Transport-level failures count toward the batch abort threshold;
    /// malformed responses do not.
    pub fn is_hard(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// One prompting attempt for one record and dimension.
#[derive(Debug, Clone)]
pub struct TagRequest {
    pub record_id: String,
    pub dimension: Dimension,
    pub label_order_seed: u64,
    /// 1-based attempt counter, never exceeding `max_retries`.
    pub attempt: u32,
}

/// Retry policy for a single record/dimension.
#[derive(Debug, Clone, Copy)]
pub struct TagPolicy {
    /// Total attempts allowed per dimension (>= 1).
    pub max_retries: u32,
    /// Derive a fresh label-order seed on each retry; when false every
    /// attempt reuses the first attempt's order.
    pub reseed_on_retry: bool,
}

impl Default for TagPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            reseed_on_retry: true,
        }
    }
}

/// Prompt templates with `{dimension}`, `{labels}`, `{rules}`, and
/// `{instruction}` placeholders. The defaults are embedded; alternatives
/// can be loaded from text files.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub cognition: String,
    pub domain: String,
    pub task: String,
}

const DEFAULT_TEMPLATE: &str = include_str!("../data/prompt_template.txt");

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            cognition: DEFAULT_TEMPLATE.to_string(),
            domain: DEFAULT_TEMPLATE.to_string(),
            task: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn template(&self, dimension: Dimension) -> &str {
        match dimension {
            Dimension::Cognition => &self.cognition,
            Dimension::Domain => &self.domain,
            Dimension::Task => &self.task,
        }
    }

    /// Loads one template file used for all three dimensions.
    pub fn from_path(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self {
            cognition: text.clone(),
            domain: text.clone(),
            task: text,
        })
    }
}

fn rules_for(dimension: Dimension) -> &'static str {
    match dimension {
        Dimension::Cognition => {
            "Choose at most two labels from the candidate list, ordered by importance. \
             Reply with exactly one JSON object of the form \
             {\"tags\": [{\"tag\": \"<label>\", \"explanation\": \"<why this label applies>\"}]} \
             and nothing else. Copy each label verbatim from the candidate list and give one \
             explanation per tag."
        }
        Dimension::Domain => {
            "Choose exactly one label from the candidate list. Reply with exactly one JSON \
             object of the form {\"tag\": \"<label>\"} and nothing else. Copy the label \
             verbatim from the candidate list."
        }
        Dimension::Task => {
            "Choose exactly one label from the candidate list. Reply with exactly one JSON \
             object of the form {\"tag\": \"<label>\"} and nothing else. Copy the label \
             verbatim from the candidate list."
        }
    }
}

/// Renders the tagging prompt for one record and dimension.
///
/// The candidate-label list (name, abbreviation, definition) appears in a
/// permutation determined by `label_order_seed`; everything else is fixed,
/// so the prompt is deterministic given (record, dimension, seed).
pub fn build_prompt(
    record: &Record,
    dimension: Dimension,
    taxonomy: &Taxonomy,
    label_order_seed: u64,
    templates: &PromptTemplates,
) -> String {
    let mut order: Vec<usize> = (0..taxonomy.len(dimension)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(label_order_seed);
    order.shuffle(&mut rng);

    let labels = order
        .iter()
        .map(|&i| {
            let label = &taxonomy.labels(dimension)[i];
            match &label.abbreviation {
                Some(abbr) => format!("- {} ({}): {}", label.name, abbr, label.definition),
                None => format!("- {}: {}", label.name, label.definition),
            }
        })
        .collect::<Vec<_>>()
        .join("\n");

    let mut instruction = record.instruction.clone();
    if let Some(input) = &record.input {
        if !input.trim().is_empty() {
            instruction.push_str("\n\nInput:\n");
            instruction.push_str(input);
        }
    }

    templates
        .template(dimension)
        .replace("{dimension}", dimension.as_str())
        .replace("{labels}", &labels)
        .replace("{rules}", rules_for(dimension))
        .replace("{instruction}", &instruction)
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("response is not the expected JSON structure: {0}")]
    Structure(String),

    #[error("expected {expected} tag(s) for {dimension}, got {got}")]
    TagCount {
        dimension: Dimension,
        expected: &'static str,
        got: usize,
    },

    #[error("cognition tag {name:?} appears twice")]
    DuplicateTag { name: String },

    #[error(transparent)]
    UnknownLabel(#[from] TaxonomyError),
}

/// Tags extracted from one backend response, already canonicalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTags {
    pub tags: Vec<String>,
    /// Parallel to `tags` for cognition; empty for domain and task.
    pub explanations: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ResponseShape {
    Cognition { tags: Vec<CognitionTag> },
    Bare { tag: String },
    TagList { tags: Vec<String> },
}

#[derive(Debug, Deserialize)]
struct CognitionTag {
    tag: String,
    explanation: String,
}

/// Parses and validates a backend response for one dimension.
///
/// Cognition responses must carry 1-2 distinct tags, each with an
/// explanation; domain and task must carry exactly one tag. Every tag is
/// resolved against the taxonomy, so unknown labels are rejected here.
pub fn parse_tagger_response(
    text: &str,
    dimension: Dimension,
    taxonomy: &Taxonomy,
) -> Result<ParsedTags, ParseError> {
    let payload = strip_code_fence(text);
    let shape: ResponseShape =
        serde_json::from_str(payload).map_err(|e| ParseError::Structure(e.to_string()))?;

    match (dimension, shape) {
        (Dimension::Cognition, ResponseShape::Cognition { tags }) => {
            if tags.is_empty() || tags.len() > 2 {
                return Err(ParseError::TagCount {
                    dimension,
                    expected: "1-2",
                    got: tags.len(),
                });
            }
            let mut resolved = Vec::with_capacity(tags.len());
            let mut explanations = Vec::with_capacity(tags.len());
            for tag in tags {
                let name = taxonomy.resolve(dimension, &tag.tag)?.to_string();
                if resolved.contains(&name) {
                    return Err(ParseError::DuplicateTag { name });
                }
                resolved.push(name);
                explanations.push(tag.explanation);
            }
            Ok(ParsedTags {
                tags: resolved,
                explanations,
            })
        }
        (Dimension::Cognition, _) => Err(ParseError::Structure(
            "cognition responses need a tags array with explanations".to_string(),
        )),
        (_, ResponseShape::Bare { tag }) => {
            let name = taxonomy.resolve(dimension, &tag)?.to_string();
            Ok(ParsedTags {
                tags: vec![name],
                explanations: Vec::new(),
            })
        }
        (_, ResponseShape::TagList { tags }) => {
            if tags.len() != 1 {
                return Err(ParseError::TagCount {
                    dimension,
                    expected: "exactly 1",
                    got: tags.len(),
                });
            }
            let name = taxonomy.resolve(dimension, &tags[0])?.to_string();
            Ok(ParsedTags {
                tags: vec![name],
                explanations: Vec::new(),
            })
        }
        (_, ResponseShape::Cognition { tags }) => {
            // A domain/task response shaped like a cognition one still
            // counts as a tag-count violation when it lists several tags.
            if tags.len() != 1 {
                return Err(ParseError::TagCount {
                    dimension,
                    expected: "exactly 1",
                    got: tags.len(),
                });
            }
            let name = taxonomy.resolve(dimension, &tags[0].tag)?.to_string();
            Ok(ParsedTags {
                tags: vec![name],
                explanations: Vec::new(),
            })
        }
    }
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(inner) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.trim_end_matches('`').trim()
}

#[derive(Debug, Error)]
pub enum TaggingError {
    #[error(
        "record {record_id:?} untaggable: {dimension} failed after {attempts} attempt(s); \
         last error: {last_error}"
    )]
    Untaggable {
        record_id: String,
        dimension: Dimension,
        attempts: u32,
        last_error: String,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("checkpoint {path} is unusable: {reason}")]
    Checkpoint { path: String, reason: String },

    #[error("aborting batch: {failures} consecutive backend failures (limit {limit})")]
    BackendUnavailable { failures: usize, limit: usize },

    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A logged retry: which dimension failed, on which attempt, and why.
#[derive(Debug, Clone)]
pub struct RetryEvent {
    pub record_id: String,
    pub dimension: Dimension,
    pub attempt: u32,
    pub error: String,
}

/// Successful annotation of one record plus its retry trail.
#[derive(Debug, Clone)]
pub struct TagOutcome {
    pub annotation: Annotation,
    pub retries: Vec<RetryEvent>,
    /// Whether any attempt failed at the transport level.
    pub saw_hard_failure: bool,
}

/// Seed for the label-order permutation of one attempt. Mixes the run
/// seed, record id, dimension, and (when reseeding) the attempt number,
/// so retries permute the label list without changing its contents.
fn label_order_seed(base_seed: u64, record_id: &str, dimension: Dimension, attempt: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(record_id.as_bytes());
    hasher.update([dimension as u8]);
    hasher.update(attempt.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

/// Annotates one record by querying the backend once per dimension.
///
/// Each dimension gets up to `policy.max_retries` attempts; a parse or
/// transport failure triggers a re-prompt with a fresh label-order seed
/// (unless `reseed_on_retry` is off). Exhausting retries on any dimension
/// makes the record untaggable.
pub fn tag_record(
    record: &Record,
    backend: &dyn TaggerBackend,
    taxonomy: &Taxonomy,
    policy: &TagPolicy,
    templates: &PromptTemplates,
    base_seed: u64,
) -> Result<TagOutcome, TaggingError> {
    assert!(policy.max_retries >= 1, "max_retries must be >= 1");
    let mut retries = Vec::new();
    let mut saw_hard_failure = false;
    let mut tags_by_dim: HashMap<Dimension, ParsedTags> = HashMap::new();

    for dimension in Dimension::ALL {
        let mut last_error = String::new();
        let mut done = false;
        for attempt in 1..=policy.max_retries {
            let seed_attempt = if policy.reseed_on_retry { attempt } else { 1 };
            let request = TagRequest {
                record_id: record.id.clone(),
                dimension,
                label_order_seed: label_order_seed(base_seed, &record.id, dimension, seed_attempt),
                attempt,
            };
            let prompt = build_prompt(
                record,
                dimension,
                taxonomy,
                request.label_order_seed,
                templates,
            );
            let outcome = match backend.complete(&prompt) {
                Ok(response) => parse_tagger_response(&response, dimension, taxonomy)
                    .map_err(|e| e.to_string()),
                Err(e) => {
                    saw_hard_failure |= e.is_hard();
                    Err(e.to_string())
                }
            };
            match outcome {
                Ok(parsed) => {
                    tags_by_dim.insert(dimension, parsed);
                    done = true;
                    break;
                }
                Err(error) => {
                    tracing::debug!(
                        record = %record.id,
                        dimension = %dimension,
                        attempt,
                        %error,
                        "tagging attempt failed"
                    );
                    retries.push(RetryEvent {
                        record_id: record.id.clone(),
                        dimension,
                        attempt,
                        error: error.clone(),
                    });
                    last_error = error;
                }
            }
        }
        if !done {
            return Err(TaggingError::Untaggable {
                record_id: record.id.clone(),
                dimension,
                attempts: policy.max_retries,
                last_error,
            });
        }
    }

    let cognition = tags_by_dim.remove(&Dimension::Cognition).expect("filled above");
    let domain = tags_by_dim.remove(&Dimension::Domain).expect("filled above");
    let task = tags_by_dim.remove(&Dimension::Task).expect("filled above");
    Ok(TagOutcome {
        annotation: Annotation {
            cognition: cognition.tags,
            cognition_explanations: cognition.explanations,
            domain: domain.tags.into_iter().next().expect("exactly one"),
            task: task.tags.into_iter().next().expect("exactly one"),
        },
        retries,
        saw_hard_failure,
    })
}

/// Token-bucket rate limiter over backend requests per second.
pub struct RateLimiter {
    rps: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rps: f64) -> Self {
        assert!(rps > 0.0);
        let capacity = rps.max(1.0);
        Self {
            rps,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a request token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let (ref mut tokens, ref mut last) = *state;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rps)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rps)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Options for batch tagging.
#[derive(Debug, Clone)]
pub struct TagOptions {
    pub policy: TagPolicy,
    /// Maximum in-flight backend calls.
    pub parallelism: usize,
    /// Requests per second across all workers; `None` disables limiting.
    pub requests_per_second: Option<f64>,
    /// Append-only labeled JSONL file; restarts resume from it.
    pub checkpoint: Option<PathBuf>,
    /// Abort the batch after this many consecutive records whose attempts
    /// all failed at the transport level.
    pub hard_failure_limit: usize,
    pub base_seed: u64,
    pub templates: PromptTemplates,
}

impl Default for TagOptions {
    fn default() -> Self {
        Self {
            policy: TagPolicy::default(),
            parallelism: 4,
            requests_per_second: Some(4.0),
            checkpoint: None,
            hard_failure_limit: 10,
            base_seed: 0,
            templates: PromptTemplates::default(),
        }
    }
}

/// One record that exhausted its retries.
#[derive(Debug, Clone)]
pub struct TagFailure {
    pub record_id: String,
    pub error: String,
}

/// Result of a batch tagging run.
#[derive(Debug)]
pub struct TagRunOutcome {
    pub labeled: LabeledCorpus,
    pub failures: Vec<TagFailure>,
    /// Records restored from the checkpoint instead of re-tagged.
    pub resumed: usize,
    /// Total retry events across all records.
    pub retry_events: usize,
}

/// Tags a whole corpus with bounded concurrency.
///
/// Records already present in the checkpoint are restored without backend
/// calls; newly tagged records are appended to the checkpoint as they
/// complete. The labeled output follows corpus order regardless of
/// completion order. Untaggable records are excluded and reported, never
/// silently defaulted.
pub fn tag_corpus(
    corpus: &Corpus,
    backend: &dyn TaggerBackend,
    taxonomy: &Taxonomy,
    options: &TagOptions,
) -> Result<TagRunOutcome, TaggingError> {
    if corpus.is_empty() {
        return Err(TaggingError::EmptyCorpus);
    }

    // Restore completed work from the checkpoint, if any.
    let mut completed: HashMap<String, Annotation> = HashMap::new();
    if let Some(path) = &options.checkpoint {
        if path.exists() {
            let restored = LabeledCorpus::read_jsonl_path(path, taxonomy).map_err(|e| {
                TaggingError::Checkpoint {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                }
            })?;
            for (record, annotation) in restored.entries() {
                completed.insert(record.id.clone(), annotation.clone());
            }
        }
    }
    let resumed = corpus
        .records()
        .iter()
        .filter(|r| completed.contains_key(&r.id))
        .count();

    let checkpoint_writer: Option<Mutex<BufWriter<std::fs::File>>> = match &options.checkpoint {
        Some(path) => {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| TaggingError::Checkpoint {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
            Some(Mutex::new(BufWriter::new(file)))
        }
        None => None,
    };

    let pending: Vec<usize> = (0..corpus.len())
        .filter(|&i| !completed.contains_key(&corpus.records()[i].id))
        .collect();

    let limiter = options.requests_per_second.map(RateLimiter::new);
    let next = AtomicUsize::new(0);
    let consecutive_hard_failures = AtomicUsize::new(0);
    let aborted = AtomicBool::new(false);
    let results: Mutex<Vec<(usize, Result<TagOutcome, TaggingError>)>> =
        Mutex::new(Vec::with_capacity(pending.len()));

    let workers = options.parallelism.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if aborted.load(Ordering::SeqCst) {
                    return;
                }
                let slot = next.fetch_add(1, Ordering::SeqCst);
                if slot >= pending.len() {
                    return;
                }
                let idx = pending[slot];
                let record = &corpus.records()[idx];
                if let Some(limiter) = &limiter {
                    limiter.acquire();
                }
                let outcome = tag_record(
                    record,
                    backend,
                    taxonomy,
                    &options.policy,
                    &options.templates,
                    options.base_seed,
                );
                match &outcome {
                    Ok(tagged) => {
                        consecutive_hard_failures.store(0, Ordering::SeqCst);
                        if let Some(writer) = &checkpoint_writer {
                            append_checkpoint_line(writer, record, &tagged.annotation, taxonomy);
                        }
                    }
                    Err(err) => {
                        let hard = matches!(
                            err,
                            TaggingError::Untaggable { last_error, .. }
                                if last_error.contains("transport failure")
                        );
                        if hard {
                            let failures =
                                consecutive_hard_failures.fetch_add(1, Ordering::SeqCst) + 1;
                            if failures >= options.hard_failure_limit {
                                aborted.store(true, Ordering::SeqCst);
                            }
                        } else {
                            consecutive_hard_failures.store(0, Ordering::SeqCst);
                        }
                    }
                }
                results.lock().expect("results poisoned").push((idx, outcome));
            });
        }
    });

    if aborted.load(Ordering::SeqCst) {
        return Err(TaggingError::BackendUnavailable {
            failures: consecutive_hard_failures.load(Ordering::SeqCst),
            limit: options.hard_failure_limit,
        });
    }

    let mut by_index: HashMap<usize, Result<TagOutcome, TaggingError>> = results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .collect();

    // Merge in corpus order so the output is independent of scheduling.
    let mut labeled = LabeledCorpus::new(taxonomy.version().to_string());
    let mut failures = Vec::new();
    let mut retry_events = 0usize;
    for (idx, record) in corpus.records().iter().enumerate() {
        if let Some(annotation) = completed.get(&record.id) {
            labeled.attach(record.clone(), annotation.clone(), taxonomy)?;
            continue;
        }
        match by_index.remove(&idx) {
            Some(Ok(outcome)) => {
                retry_events += outcome.retries.len();
                labeled.attach(record.clone(), outcome.annotation, taxonomy)?;
            }
            Some(Err(err)) => failures.push(TagFailure {
                record_id: record.id.clone(),
                error: err.to_string(),
            }),
            None => failures.push(TagFailure {
                record_id: record.id.clone(),
                error: "not processed (batch aborted early)".to_string(),
            }),
        }
    }

    Ok(TagRunOutcome {
        labeled,
        failures,
        resumed,
        retry_events,
    })
}

/// Appends one labeled line to the checkpoint; checkpoint lines use the
/// same schema as exported labeled JSONL.
fn append_checkpoint_line(
    writer: &Mutex<BufWriter<std::fs::File>>,
    record: &Record,
    annotation: &Annotation,
    taxonomy: &Taxonomy,
) {
    let mut single = LabeledCorpus::new(taxonomy.version().to_string());
    if single
        .attach(record.clone(), annotation.clone(), taxonomy)
        .is_ok()
    {
        let mut buf = Vec::new();
        if single.export(&mut buf).is_ok() {
            let mut guard = writer.lock().expect("checkpoint poisoned");
            let _ = guard.write_all(&buf);
            let _ = guard.flush();
        }
    }
}

/// Deterministic, backend-free tagger for tests, demos, and dry runs.
///
/// Labels derive from a hash of the instruction text, uniformly over the
/// taxonomy; an override map can pin exact annotations per instruction.
/// Also implements [`TaggerBackend`] by parsing the default prompt
/// template, so the full pipeline can run without any endpoint.
pub struct StubTagger {
    taxonomy: Taxonomy,
    overrides: HashMap<String, Annotation>,
    calls: AtomicUsize,
}

impl StubTagger {
    pub fn new(taxonomy: Taxonomy) -> Self {
        Self {
            taxonomy,
            overrides: HashMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Pins the annotation returned for an exact instruction text.
    pub fn with_override(mut self, instruction: impl Into<String>, annotation: Annotation) -> Self {
        self.overrides.insert(instruction.into(), annotation);
        self
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Deterministic annotation for a record: hash of the instruction
    /// picks 1-2 cognition tags, a domain, and a task.
    pub fn annotate(&self, record: &Record) -> Annotation {
        if let Some(annotation) = self.overrides.get(&record.instruction) {
            return annotation.clone();
        }
        let digest = Sha256::digest(record.instruction.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let cognition_labels = self.taxonomy.labels(Dimension::Cognition);
        let take_two = cognition_labels.len() >= 2 && rng.random_bool(0.5);
        let first = rng.random_range(0..cognition_labels.len());
        let mut cognition = vec![cognition_labels[first].name.clone()];
        if take_two {
            let mut second = rng.random_range(0..cognition_labels.len() - 1);
            if second >= first {
                second += 1;
            }
            cognition.push(cognition_labels[second].name.clone());
        }
        let cognition_explanations = cognition
            .iter()
            .map(|name| format!("the instruction exercises {name}"))
            .collect();

        let domain_labels = self.taxonomy.labels(Dimension::Domain);
        let task_labels = self.taxonomy.labels(Dimension::Task);
        Annotation {
            cognition,
            cognition_explanations,
            domain: domain_labels[rng.random_range(0..domain_labels.len())].name.clone(),
            task: task_labels[rng.random_range(0..task_labels.len())].name.clone(),
        }
    }

    fn respond(&self, dimension: Dimension, instruction: &str) -> String {
        let record = Record {
            id: String::new(),
            instruction: instruction.to_string(),
            input: None,
            response: None,
            source: None,
        };
        let annotation = self.annotate(&record);
        match dimension {
            Dimension::Cognition => {
                let tags: Vec<serde_json::Value> = annotation
                    .cognition
                    .iter()
                    .zip(&annotation.cognition_explanations)
                    .map(|(tag, explanation)| {
                        serde_json::json!({"tag": tag, "explanation": explanation})
                    })
                    .collect();
                serde_json::json!({ "tags": tags }).to_string()
            }
            Dimension::Domain => serde_json::json!({ "tag": annotation.domain }).to_string(),
            Dimension::Task => serde_json::json!({ "tag": annotation.task }).to_string(),
        }
    }
}

impl TaggerBackend for StubTagger {
    fn identity(&self) -> &str {
        "stub"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (dimension, instruction) = parse_default_prompt(prompt).ok_or_else(|| {
            BackendError::Transport("stub backend only understands the default template".into())
        })?;
        Ok(self.respond(dimension, &instruction))
    }
}

/// Extracts (dimension, instruction) from a default-template prompt.
pub fn parse_default_prompt(prompt: &str) -> Option<(Dimension, String)> {
    let dimension_line = prompt
        .lines()
        .find_map(|line| line.strip_prefix("Dimension: "))?;
    let dimension: Dimension = dimension_line.trim().parse().ok()?;
    let after = prompt.split("### Instruction\n").nth(1)?;
    let instruction = after.split("\n\n### Answer").next()?;
    // The prompt may append the record's input block; the stub hashes only
    // the instruction proper.
    let instruction = instruction.split("\n\nInput:\n").next()?;
    Some((dimension, instruction.to_string()))
}

/// Backend speaking the OpenAI-style chat-completions protocol.
///
/// The request carries the prompt as a single user message at temperature
/// 0; the response text is taken from `choices[0].message.content` (or
/// `choices[0].text` for legacy completion endpoints).
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    identity: String,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Self {
        let endpoint = endpoint.into();
        let model = model.into();
        let identity = format!("http:{endpoint}#{model}");
        Self {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("reqwest client"),
            endpoint,
            model,
            api_key,
            identity,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    #[serde(default)]
    message: Option<ChatMessage>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

impl TaggerBackend for HttpBackend {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
        });
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: response.text().unwrap_or_default(),
            });
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or(BackendError::MissingCompletion)?;
        match (choice.message, choice.text) {
            (Some(message), _) => Ok(message.content),
            (None, Some(text)) => Ok(text),
            (None, None) => Err(BackendError::MissingCompletion),
        }
    }
}
