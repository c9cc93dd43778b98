//! The canonical cognition/domain/task label space.
//!
//! A [`Taxonomy`] is loaded from a TOML document, validated once, and then
//! immutable: lookups never mutate state, so shared references are safe
//! across threads. Raw label strings coming back from taggers (or typed by
//! humans) are canonicalized through [`Taxonomy::resolve`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// TOML source of the default taxonomy shipped with the crate.
pub const BUNDLED_TAXONOMY: &str = include_str!("../data/taxonomy.toml");

/// One of the three capability dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Cognition,
    Domain,
    Task,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Cognition, Dimension::Domain, Dimension::Task];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Cognition => "cognition",
            Dimension::Domain => "domain",
            Dimension::Task => "task",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dimension {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cognition" => Ok(Dimension::Cognition),
            "domain" => Ok(Dimension::Domain),
            "task" => Ok(Dimension::Task),
            other => Err(TaxonomyError::UnknownDimension(other.to_string())),
        }
    }
}

/// A single canonical label in one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityLabel {
    pub name: String,
    /// Short code, cognition labels only (e.g. "PR").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abbreviation: Option<String>,
    /// Top-level grouping, domain labels only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub definition: String,
}

/// An element (c, d, t) of the composite capability space.
///
/// Fields hold canonical label names; equality and ordering are field-wise,
/// so triplets can key ordered maps deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompositeTriplet {
    pub cognition: String,
    pub domain: String,
    pub task: String,
}

impl CompositeTriplet {
    pub fn new(
        cognition: impl Into<String>,
        domain: impl Into<String>,
        task: impl Into<String>,
    ) -> Self {
        Self {
            cognition: cognition.into(),
            domain: domain.into(),
            task: task.into(),
        }
    }
}

impl fmt::Display for CompositeTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.cognition, self.domain, self.task)
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy document is not valid TOML: {0}")]
    Malformed(#[from] toml::de::Error),

    #[error("failed to read taxonomy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate {dimension} label {name:?}")]
    DuplicateLabel { dimension: Dimension, name: String },

    #[error("duplicate cognition abbreviation {abbreviation:?} on label {name:?}")]
    DuplicateAbbreviation { abbreviation: String, name: String },

    #[error("{dimension} label {name:?} has an empty definition")]
    EmptyDefinition { dimension: Dimension, name: String },

    #[error("{dimension} label {name:?} must not carry an abbreviation")]
    UnexpectedAbbreviation { dimension: Dimension, name: String },

    #[error("cognition label {name:?} is missing an abbreviation")]
    MissingAbbreviation { name: String },

    #[error("domain label {name:?} is missing its top-level group")]
    MissingGroup { name: String },

    #[error("wrong cardinality for dimension {dimension}: expected {expected}, found {found}")]
    Cardinality {
        dimension: Dimension,
        expected: usize,
        found: usize,
    },

    #[error("unknown {dimension} label {raw:?}{}", format_suggestions(.suggestions))]
    UnknownLabel {
        dimension: Dimension,
        raw: String,
        suggestions: Vec<String>,
    },

    #[error("label to resolve is empty")]
    EmptyLabel,

    #[error("unknown dimension {0:?} (expected cognition, domain, or task)")]
    UnknownDimension(String),
}

fn format_suggestions(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!(" (did you mean: {}?)", suggestions.join(", "))
    }
}

#[derive(Debug, Deserialize)]
struct TaxonomyDoc {
    version: String,
    #[serde(default)]
    expected: Option<ExpectedCounts>,
    #[serde(default)]
    cognition: Vec<CapabilityLabel>,
    #[serde(default)]
    domain: Vec<CapabilityLabel>,
    #[serde(default)]
    task: Vec<CapabilityLabel>,
}

#[derive(Debug, Deserialize)]
struct ExpectedCounts {
    cognition: usize,
    domain: usize,
    task: usize,
}

/// The validated, immutable label space.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    version: String,
    cognition: Vec<CapabilityLabel>,
    domain: Vec<CapabilityLabel>,
    task: Vec<CapabilityLabel>,
    /// (dimension, normalized name or abbreviation) -> index into the
    /// dimension's label vector.
    lookup: HashMap<(Dimension, String), usize>,
}

impl Taxonomy {
    /// Loads and validates the taxonomy bundled with the crate.
    pub fn bundled() -> Result<Self, TaxonomyError> {
        Self::from_toml_str(BUNDLED_TAXONOMY)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Parses a taxonomy document and runs every structural invariant.
    ///
    /// Loading is idempotent: the same document always yields an equal
    /// taxonomy. When the document carries an `[expected]` block the
    /// dimension cardinalities are enforced against it; documents without
    /// the block (e.g. small synthetic taxonomies) may have any sizes.
    pub fn from_toml_str(text: &str) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDoc = toml::from_str(text)?;

        if let Some(expected) = &doc.expected {
            for (dimension, found, want) in [
                (Dimension::Cognition, doc.cognition.len(), expected.cognition),
                (Dimension::Domain, doc.domain.len(), expected.domain),
                (Dimension::Task, doc.task.len(), expected.task),
            ] {
                if found != want {
                    return Err(TaxonomyError::Cardinality {
                        dimension,
                        expected: want,
                        found,
                    });
                }
            }
        }

        let mut lookup = HashMap::new();
        for (dimension, labels) in [
            (Dimension::Cognition, &doc.cognition),
            (Dimension::Domain, &doc.domain),
            (Dimension::Task, &doc.task),
        ] {
            for (idx, label) in labels.iter().enumerate() {
                if label.definition.trim().is_empty() {
                    return Err(TaxonomyError::EmptyDefinition {
                        dimension,
                        name: label.name.clone(),
                    });
                }
                match dimension {
                    Dimension::Cognition => {
                        if label.abbreviation.is_none() {
                            return Err(TaxonomyError::MissingAbbreviation {
                                name: label.name.clone(),
                            });
                        }
                    }
                    Dimension::Domain => {
                        if label.group.is_none() {
                            return Err(TaxonomyError::MissingGroup {
                                name: label.name.clone(),
                            });
                        }
                        if label.abbreviation.is_some() {
                            return Err(TaxonomyError::UnexpectedAbbreviation {
                                dimension,
                                name: label.name.clone(),
                            });
                        }
                    }
                    Dimension::Task => {
                        if label.abbreviation.is_some() {
                            return Err(TaxonomyError::UnexpectedAbbreviation {
                                dimension,
                                name: label.name.clone(),
                            });
                        }
                    }
                }

                let key = (dimension, normalize(&label.name));
                if lookup.insert(key, idx).is_some() {
                    return Err(TaxonomyError::DuplicateLabel {
                        dimension,
                        name: label.name.clone(),
                    });
                }
                if let Some(abbr) = &label.abbreviation {
                    let key = (dimension, normalize(abbr));
                    if lookup.insert(key, idx).is_some() {
                        return Err(TaxonomyError::DuplicateAbbreviation {
                            abbreviation: abbr.clone(),
                            name: label.name.clone(),
                        });
                    }
                }
            }
        }

        Ok(Self {
            version: doc.version,
            cognition: doc.cognition,
            domain: doc.domain,
            task: doc.task,
            lookup,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn labels(&self, dimension: Dimension) -> &[CapabilityLabel] {
        match dimension {
            Dimension::Cognition => &self.cognition,
            Dimension::Domain => &self.domain,
            Dimension::Task => &self.task,
        }
    }

    pub fn len(&self, dimension: Dimension) -> usize {
        self.labels(dimension).len()
    }

    /// Size of the full composite space |C| * |D| * |T|.
    pub fn composite_space_size(&self) -> u64 {
        self.cognition.len() as u64 * self.domain.len() as u64 * self.task.len() as u64
    }

    /// Canonicalizes a raw label string against one dimension.
    ///
    /// Matching is case-insensitive on canonical names and, for cognition,
    /// abbreviations; surrounding whitespace and trailing punctuation are
    /// ignored. On failure the error carries the nearest canonical names
    /// within edit distance 2 as suggestions.
    pub fn resolve(&self, dimension: Dimension, raw: &str) -> Result<&str, TaxonomyError> {
        let cleaned = clean_raw(raw);
        if cleaned.is_empty() {
            return Err(TaxonomyError::EmptyLabel);
        }
        let normalized = normalize(&cleaned);
        if let Some(&idx) = self.lookup.get(&(dimension, normalized.clone())) {
            return Ok(&self.labels(dimension)[idx].name);
        }

        let mut suggestions: Vec<(usize, String)> = self
            .labels(dimension)
            .iter()
            .filter_map(|label| {
                let dist = edit_distance(&normalized, &normalize(&label.name));
                (dist <= 2).then(|| (dist, label.name.clone()))
            })
            .collect();
        suggestions.sort();
        Err(TaxonomyError::UnknownLabel {
            dimension,
            raw: raw.to_string(),
            suggestions: suggestions.into_iter().map(|(_, name)| name).collect(),
        })
    }

    /// Checks that a triplet references existing labels in every dimension.
    pub fn contains_triplet(&self, triplet: &CompositeTriplet) -> bool {
        self.lookup
            .contains_key(&(Dimension::Cognition, normalize(&triplet.cognition)))
            && self
                .lookup
                .contains_key(&(Dimension::Domain, normalize(&triplet.domain)))
            && self
                .lookup
                .contains_key(&(Dimension::Task, normalize(&triplet.task)))
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Strips surrounding whitespace and trailing punctuation from tagger output.
fn clean_raw(raw: &str) -> String {
    raw.trim()
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim()
        .to_string()
}

/// Levenshtein distance; used only for diagnostics on unknown labels.
fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j + 1] + 1).min(cur[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
