//! Instruction corpora: JSONL ingestion, annotations, and composite
//! extraction.
//!
//! Corpora are built single-writer and treated as immutable afterwards.
//! Record order is preserved from the input stream; every algorithm that
//! consumes a corpus relies on that order for reproducibility.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::{CompositeTriplet, Dimension, Taxonomy, TaxonomyError};

/// Default cap applied to validation sets before capability-oriented
/// selection.
pub const DEFAULT_VALIDATION_CAP: usize = 200;

/// How a record with two cognition tags contributes to the composite
/// multiset: one triplet per tag (default) or only the first tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    #[default]
    AllCognitionTags,
    FirstCognitionTag,
}

impl Expansion {
    pub fn as_str(self) -> &'static str {
        match self {
            Expansion::AllCognitionTags => "all_cognition_tags",
            Expansion::FirstCognitionTag => "first_cognition_tag",
        }
    }
}

impl std::str::FromStr for Expansion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" | "all_cognition_tags" => Ok(Expansion::AllCognitionTags),
            "first" | "first_cognition_tag" => Ok(Expansion::FirstCognitionTag),
            other => Err(format!(
                "unknown expansion mode {other:?} (expected \"all\" or \"first\")"
            )),
        }
    }
}

/// One instruction-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Record {
    /// Stable id derived from the record content; used when the source
    /// carries no explicit id.
    pub fn content_id(instruction: &str, input: Option<&str>) -> String {
        let mut hasher = Sha256::new();
        hasher.update(instruction.as_bytes());
        hasher.update([0x1f]);
        hasher.update(input.unwrap_or("").as_bytes());
        let digest = hasher.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Capability labels attached to one record: 1-2 cognition tags with
/// explanations, exactly one domain and one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub cognition: Vec<String>,
    pub cognition_explanations: Vec<String>,
    pub domain: String,
    pub task: String,
}

impl Annotation {
    /// Canonicalizes every label against the taxonomy and checks the
    /// structural invariants. Returns the annotation with canonical names.
    pub fn canonicalized(mut self, taxonomy: &Taxonomy) -> Result<Self, CorpusError> {
        if self.cognition.is_empty() || self.cognition.len() > 2 {
            return Err(CorpusError::CognitionTagCount {
                got: self.cognition.len(),
            });
        }
        if self.cognition_explanations.len() != self.cognition.len() {
            return Err(CorpusError::ExplanationMismatch {
                tags: self.cognition.len(),
                explanations: self.cognition_explanations.len(),
            });
        }
        for tag in &mut self.cognition {
            *tag = taxonomy.resolve(Dimension::Cognition, tag)?.to_string();
        }
        if self.cognition.len() == 2 && self.cognition[0] == self.cognition[1] {
            return Err(CorpusError::DuplicateCognitionTag {
                name: self.cognition[0].clone(),
            });
        }
        self.domain = taxonomy.resolve(Dimension::Domain, &self.domain)?.to_string();
        self.task = taxonomy.resolve(Dimension::Task, &self.task)?.to_string();
        Ok(self)
    }

    /// Composite triplets contributed by this annotation under the given
    /// expansion mode, in tag order.
    pub fn composites(&self, expansion: Expansion) -> Vec<CompositeTriplet> {
        let tags: &[String] = match expansion {
            Expansion::AllCognitionTags => &self.cognition,
            Expansion::FirstCognitionTag => &self.cognition[..1],
        };
        tags.iter()
            .map(|c| CompositeTriplet::new(c.clone(), self.domain.clone(), self.task.clone()))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "{rejected} of {total} lines rejected ({diagnosis}); input does not look like the \
         expected JSONL format"
    )]
    MostlyRejected {
        rejected: usize,
        total: usize,
        diagnosis: String,
    },

    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },

    #[error("duplicate record id {id:?}")]
    DuplicateId { id: String },

    #[error("no record with id {id:?} in this corpus")]
    UnknownId { id: String },

    #[error("instruction is empty")]
    EmptyInstruction,

    #[error("record is missing its annotation")]
    MissingAnnotation,

    #[error("expected 1-2 cognition tags, got {got}")]
    CognitionTagCount { got: usize },

    #[error("cognition tag {name:?} appears twice")]
    DuplicateCognitionTag { name: String },

    #[error("{tags} cognition tags but {explanations} explanations")]
    ExplanationMismatch { tags: usize, explanations: usize },

    #[error(
        "annotation taxonomy version {found:?} does not match active taxonomy {expected:?}"
    )]
    VersionMismatch { expected: String, found: String },

    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),

    #[error("export failed after writing {written} lines: {source}")]
    ExportIo {
        written: usize,
        #[source]
        source: std::io::Error,
    },
}

/// An unlabeled corpus with stable record order and unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<Record>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: Record) -> Result<(), CorpusError> {
        if record.instruction.trim().is_empty() {
            return Err(CorpusError::EmptyInstruction);
        }
        if self.index.contains_key(&record.id) {
            return Err(CorpusError::DuplicateId {
                id: record.id.clone(),
            });
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.index.get(id).map(|&i| &self.records[i])
    }
}

/// Wire format of one JSONL line; `annotation` present only in labeled
/// files. Field names and order are part of the format.
#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(default, alias = "output", skip_serializing_if = "Option::is_none")]
    response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotation: Option<AnnotationLine>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationLine {
    cognition: Vec<String>,
    cognition_explanations: Vec<String>,
    domain: String,
    task: String,
    taxonomy_version: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Collapse records with identical (instruction, input) pairs.
    pub dedup: bool,
}

/// Result of an ingest run: the corpus plus skip accounting.
#[derive(Debug)]
pub struct IngestOutcome {
    pub corpus: Corpus,
    pub skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
    pub deduplicated: usize,
}

/// Reads line-delimited JSON records from a stream.
///
/// Lines failing validation are skipped and counted per reason; blank lines
/// are ignored. Ids are synthesized from content hashes when absent. If more
/// than half of the non-blank lines are rejected the whole ingest aborts
/// with a format diagnosis.
pub fn ingest(reader: impl BufRead, options: IngestOptions) -> Result<IngestOutcome, CorpusError> {
    let mut corpus = Corpus::new();
    let mut skipped = 0usize;
    let mut skip_reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut deduplicated = 0usize;
    let mut seen_content: HashMap<String, ()> = HashMap::new();
    let mut total = 0usize;

    let skip = |reasons: &mut BTreeMap<String, usize>, count: &mut usize, reason: &str| {
        *count += 1;
        *reasons.entry(reason.to_string()).or_insert(0) += 1;
    };

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;

        let parsed: RecordLine = match serde_json::from_str(&line) {
            Ok(parsed) => parsed,
            Err(err) => {
                tracing::debug!(line = line_no + 1, %err, "skipping unparseable line");
                skip(&mut skip_reasons, &mut skipped, "invalid json");
                continue;
            }
        };

        if parsed.instruction.trim().is_empty() {
            skip(&mut skip_reasons, &mut skipped, "empty instruction");
            continue;
        }

        if options.dedup {
            let key = Record::content_id(&parsed.instruction, parsed.input.as_deref());
            if seen_content.insert(key, ()).is_some() {
                deduplicated += 1;
                continue;
            }
        }

        let id = parsed
            .id
            .clone()
            .unwrap_or_else(|| Record::content_id(&parsed.instruction, parsed.input.as_deref()));
        let record = Record {
            id,
            instruction: parsed.instruction,
            input: parsed.input,
            response: parsed.response,
            source: parsed.source,
        };
        if corpus.push(record).is_err() {
            skip(&mut skip_reasons, &mut skipped, "duplicate id");
            continue;
        }
    }

    if total > 0 && skipped * 2 > total {
        let diagnosis = skip_reasons
            .iter()
            .map(|(reason, count)| format!("{reason}: {count}"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(CorpusError::MostlyRejected {
            rejected: skipped,
            total,
            diagnosis,
        });
    }

    Ok(IngestOutcome {
        corpus,
        skipped,
        skip_reasons,
        deduplicated,
    })
}

/// A corpus where every record carries a validated annotation.
#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    entries: Vec<(Record, Annotation)>,
    index: HashMap<String, usize>,
    taxonomy_version: String,
}

impl LabeledCorpus {
    pub fn new(taxonomy_version: String) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            taxonomy_version,
        }
    }

    /// Attaches an annotated record, canonicalizing labels against the
    /// active taxonomy. Annotations that do not validate never enter the
    /// corpus.
    pub fn attach(
        &mut self,
        record: Record,
        annotation: Annotation,
        taxonomy: &Taxonomy,
    ) -> Result<(), CorpusError> {
        if taxonomy.version() != self.taxonomy_version {
            return Err(CorpusError::VersionMismatch {
                expected: self.taxonomy_version.clone(),
                found: taxonomy.version().to_string(),
            });
        }
        if record.instruction.trim().is_empty() {
            return Err(CorpusError::EmptyInstruction);
        }
        if self.index.contains_key(&record.id) {
            return Err(CorpusError::DuplicateId {
                id: record.id.clone(),
            });
        }
        let annotation = annotation.canonicalized(taxonomy)?;
        self.index.insert(record.id.clone(), self.entries.len());
        self.entries.push((record, annotation));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn taxonomy_version(&self) -> &str {
        &self.taxonomy_version
    }

    pub fn entries(&self) -> &[(Record, Annotation)] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&(Record, Annotation)> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Extracts the composite multiset of the corpus (`Composites`).
    ///
    /// Under [`Expansion::AllCognitionTags`] a record with k cognition tags
    /// contributes k triplets; under [`Expansion::FirstCognitionTag`]
    /// exactly one. An empty corpus yields an empty multiset.
    pub fn composites(&self, expansion: Expansion) -> CompositeMultiset {
        let mut multiset = CompositeMultiset::default();
        for (_, annotation) in &self.entries {
            for triplet in annotation.composites(expansion) {
                multiset.add(triplet, 1);
            }
        }
        multiset
    }

    /// Builds a sub-corpus containing the given ids, in the given order.
    /// Entries were validated when first attached, so no re-validation
    /// happens here.
    pub fn subset_by_ids<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<LabeledCorpus, CorpusError> {
        let mut subset = LabeledCorpus::new(self.taxonomy_version.clone());
        for id in ids {
            let &idx = self
                .index
                .get(id)
                .ok_or_else(|| CorpusError::UnknownId { id: id.to_string() })?;
            let (record, annotation) = self.entries[idx].clone();
            if subset.index.contains_key(&record.id) {
                return Err(CorpusError::DuplicateId { id: record.id });
            }
            subset.index.insert(record.id.clone(), subset.entries.len());
            subset.entries.push((record, annotation));
        }
        Ok(subset)
    }

    /// Uniform random subset of at most `cap` records, deterministic per
    /// seed. Record order of the original corpus is preserved. Corpora
    /// already within the cap are returned unchanged.
    pub fn cap_validation(&self, cap: usize, seed: u64) -> LabeledCorpus {
        assert!(cap >= 1, "cap must be >= 1");
        if self.entries.len() <= cap {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..self.entries.len()).collect();
        // Partial Fisher-Yates: the first `cap` slots end up a uniform
        // sample without replacement.
        for i in 0..cap {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        let mut chosen: Vec<usize> = indices[..cap].to_vec();
        chosen.sort_unstable();

        let mut subset = LabeledCorpus::new(self.taxonomy_version.clone());
        for idx in chosen {
            let (record, annotation) = self.entries[idx].clone();
            subset.index.insert(record.id.clone(), subset.entries.len());
            subset.entries.push((record, annotation));
        }
        subset
    }

    /// Writes the corpus as labeled JSONL. Returns the number of lines
    /// written; an I/O failure reports how many lines made it out.
    pub fn export(&self, mut sink: impl Write) -> Result<usize, CorpusError> {
        let mut written = 0usize;
        for (record, annotation) in &self.entries {
            let line = RecordLine {
                id: Some(record.id.clone()),
                instruction: record.instruction.clone(),
                input: record.input.clone(),
                response: record.response.clone(),
                source: record.source.clone(),
                annotation: Some(AnnotationLine {
                    cognition: annotation.cognition.clone(),
                    cognition_explanations: annotation.cognition_explanations.clone(),
                    domain: annotation.domain.clone(),
                    task: annotation.task.clone(),
                    taxonomy_version: self.taxonomy_version.clone(),
                }),
            };
            let to_io = |source| CorpusError::ExportIo { written, source };
            let json = serde_json::to_string(&line)
                .map_err(|e| to_io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            sink.write_all(json.as_bytes()).map_err(to_io)?;
            sink.write_all(b"\n").map_err(to_io)?;
            written += 1;
        }
        sink.flush()
            .map_err(|source| CorpusError::ExportIo { written, source })?;
        Ok(written)
    }

    pub fn export_to_path(&self, path: impl AsRef<Path>) -> Result<usize, CorpusError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| CorpusError::Open {
            path: path.display().to_string(),
            source,
        })?;
        self.export(std::io::BufWriter::new(file))
    }

    /// Reads a labeled JSONL file, validating every annotation against the
    /// active taxonomy. Any invalid line is a hard error (labeled files are
    /// artifacts of this toolkit, not raw inputs).
    pub fn read_jsonl(
        reader: impl BufRead,
        taxonomy: &Taxonomy,
    ) -> Result<LabeledCorpus, CorpusError> {
        let mut corpus = LabeledCorpus::new(taxonomy.version().to_string());
        stream_labeled_jsonl(reader, taxonomy, |record, annotation| {
            corpus.attach(record, annotation, taxonomy)
        })?;
        Ok(corpus)
    }

    pub fn read_jsonl_path(
        path: impl AsRef<Path>,
        taxonomy: &Taxonomy,
    ) -> Result<LabeledCorpus, CorpusError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| CorpusError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_jsonl(std::io::BufReader::new(file), taxonomy)
    }
}

/// Streams a labeled JSONL file line by line without building a corpus.
///
/// Each line is parsed, version-checked, and label-canonicalized before
/// the visitor sees it; the visitor may reject a line by returning an
/// error. Returns the number of lines visited.
pub fn stream_labeled_jsonl<V>(
    reader: impl BufRead,
    taxonomy: &Taxonomy,
    mut visit: V,
) -> Result<usize, CorpusError>
where
    V: FnMut(Record, Annotation) -> Result<(), CorpusError>,
{
    let mut count = 0usize;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |source: CorpusError| CorpusError::Line {
            line: line_no + 1,
            source: Box::new(source),
        };
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| {
            wrap(CorpusError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                e,
            )))
        })?;
        let annotation_line = parsed
            .annotation
            .ok_or_else(|| wrap(CorpusError::MissingAnnotation))?;
        if annotation_line.taxonomy_version != taxonomy.version() {
            return Err(wrap(CorpusError::VersionMismatch {
                expected: taxonomy.version().to_string(),
                found: annotation_line.taxonomy_version,
            }));
        }
        let id = parsed
            .id
            .unwrap_or_else(|| Record::content_id(&parsed.instruction, parsed.input.as_deref()));
        let record = Record {
            id,
            instruction: parsed.instruction,
            input: parsed.input,
            response: parsed.response,
            source: parsed.source,
        };
        let annotation = Annotation {
            cognition: annotation_line.cognition,
            cognition_explanations: annotation_line.cognition_explanations,
            domain: annotation_line.domain,
            task: annotation_line.task,
        }
        .canonicalized(taxonomy)
        .map_err(&wrap)?;
        visit(record, annotation).map_err(wrap)?;
        count += 1;
    }
    Ok(count)
}

/// Multiset of composite triplets with their occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompositeMultiset {
    counts: BTreeMap<CompositeTriplet, u64>,
    total: u64,
}

impl CompositeMultiset {
    pub fn add(&mut self, triplet: CompositeTriplet, count: u64) {
        debug_assert!(count >= 1);
        *self.counts.entry(triplet).or_insert(0) += count;
        self.total += count;
    }

    pub fn counts(&self) -> &BTreeMap<CompositeTriplet, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

impl FromIterator<CompositeTriplet> for CompositeMultiset {
    fn from_iter<I: IntoIterator<Item = CompositeTriplet>>(iter: I) -> Self {
        let mut multiset = CompositeMultiset::default();
        for triplet in iter {
            multiset.add(triplet, 1);
        }
        multiset
    }
}
