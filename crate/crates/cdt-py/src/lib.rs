//! Python bindings for the capability curation toolkit.
//!
//! Exposes the taxonomy, labeled corpora, metrics, and the two selection
//! algorithms. Scalar results come back as native Python values; full
//! reports are returned as JSON strings so Python can `json.loads` them.
//!
//! Build with `cargo build -p cdt-py --release`; the resulting cdylib
//! imports as the `cdt_py` module (see python/smoke_test.py).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cdt_core::corpus::{ingest, Expansion, IngestOptions, LabeledCorpus};
use cdt_core::metrics::{self, LogBase};
use cdt_core::selection::{
    self, DimensionMask, SelectionParams, SelectionResult, SelectionTarget,
};
use cdt_core::tagging::{tag_corpus, StubTagger, TagOptions};
use cdt_core::taxonomy::{Dimension, Taxonomy as CoreTaxonomy};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn parse_dimension(name: &str) -> PyResult<Dimension> {
    Dimension::from_str(name).map_err(value_err)
}

fn parse_expansion(name: &str) -> PyResult<Expansion> {
    Expansion::from_str(name).map_err(value_err)
}

/// The validated cognition/domain/task label space.
#[pyclass(name = "Taxonomy", skip_from_py_object)]
#[derive(Clone)]
struct PyTaxonomy {
    inner: CoreTaxonomy,
}

#[pymethods]
impl PyTaxonomy {
    /// Loads the taxonomy bundled with the library.
    #[staticmethod]
    fn bundled() -> PyResult<Self> {
        Ok(Self {
            inner: CoreTaxonomy::bundled().map_err(value_err)?,
        })
    }

    /// Loads and validates a taxonomy TOML document.
    #[staticmethod]
    fn from_path(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTaxonomy::from_path(path).map_err(value_err)?,
        })
    }

    #[getter]
    fn version(&self) -> &str {
        self.inner.version()
    }

    /// (cognition, domain, task) label counts.
    fn counts(&self) -> (usize, usize, usize) {
        (
            self.inner.len(Dimension::Cognition),
            self.inner.len(Dimension::Domain),
            self.inner.len(Dimension::Task),
        )
    }

    fn composite_space_size(&self) -> u64 {
        self.inner.composite_space_size()
    }

    /// Canonical label names of one dimension.
    fn labels(&self, dimension: &str) -> PyResult<Vec<String>> {
        let dim = parse_dimension(dimension)?;
        Ok(self
            .inner
            .labels(dim)
            .iter()
            .map(|l| l.name.clone())
            .collect())
    }

    /// Canonicalizes a raw label string against one dimension.
    fn resolve(&self, dimension: &str, raw: &str) -> PyResult<String> {
        let dim = parse_dimension(dimension)?;
        Ok(self.inner.resolve(dim, raw).map_err(value_err)?.to_string())
    }

    fn __repr__(&self) -> String {
        let (c, d, t) = self.counts();
        format!(
            "Taxonomy(version={:?}, cognition={c}, domain={d}, task={t})",
            self.inner.version()
        )
    }
}

/// A labeled corpus read from (or written to) labeled JSONL.
#[pyclass(name = "LabeledCorpus", skip_from_py_object)]
#[derive(Clone)]
struct PyLabeledCorpus {
    inner: LabeledCorpus,
}

#[pymethods]
impl PyLabeledCorpus {
    /// Reads a labeled JSONL file, validating against the taxonomy.
    #[staticmethod]
    fn read_jsonl(path: PathBuf, taxonomy: &PyTaxonomy) -> PyResult<Self> {
        Ok(Self {
            inner: LabeledCorpus::read_jsonl_path(path, &taxonomy.inner).map_err(value_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn taxonomy_version(&self) -> &str {
        self.inner.taxonomy_version()
    }

    fn ids(&self) -> Vec<String> {
        self.inner
            .entries()
            .iter()
            .map(|(r, _)| r.id.clone())
            .collect()
    }

    /// Writes the corpus as labeled JSONL; returns the line count.
    fn write_jsonl(&self, path: PathBuf) -> PyResult<usize> {
        self.inner.export_to_path(path).map_err(io_err)
    }

    /// Uniform random subset of at most `cap` records (deterministic per
    /// seed); corpora within the cap are returned unchanged.
    #[pyo3(signature = (cap = 200, seed = 0))]
    fn cap_validation(&self, cap: usize, seed: u64) -> PyResult<Self> {
        if cap == 0 {
            return Err(value_err("cap must be >= 1"));
        }
        Ok(Self {
            inner: self.inner.cap_validation(cap, seed),
        })
    }

    /// Sub-corpus with the given ids, in the given order.
    fn subset(&self, ids: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self
                .inner
                .subset_by_ids(ids.iter().map(|s| s.as_str()))
                .map_err(value_err)?,
        })
    }

    /// Number of distinct composite triplets under an expansion mode.
    #[pyo3(signature = (expansion = "all"))]
    fn distinct_composites(&self, expansion: &str) -> PyResult<usize> {
        Ok(self.inner.composites(parse_expansion(expansion)?).distinct())
    }

    fn __repr__(&self) -> String {
        format!(
            "LabeledCorpus(records={}, taxonomy_version={:?})",
            self.inner.len(),
            self.inner.taxonomy_version()
        )
    }
}

/// Outcome of a selection run.
#[pyclass(name = "Selection")]
struct PySelection {
    inner: SelectionResult,
}

#[pymethods]
impl PySelection {
    /// Selected record ids in pick order.
    fn ids(&self) -> Vec<String> {
        self.inner.picks.iter().map(|p| p.id.clone()).collect()
    }

    /// Stage tag per pick, parallel to `ids()`.
    fn stages(&self) -> Vec<String> {
        self.inner
            .picks
            .iter()
            .map(|p| p.stage.as_str().to_string())
            .collect()
    }

    #[getter]
    fn achieved_r(&self) -> f64 {
        self.inner.achieved_r
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn stage_counts(&self) -> BTreeMap<String, usize> {
        self.inner
            .stage_counts
            .iter()
            .map(|(stage, count)| (stage.as_str().to_string(), *count))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Materializes the selection as a corpus, in pick order.
    fn materialize(&self, pool: &PyLabeledCorpus) -> PyResult<PyLabeledCorpus> {
        Ok(PyLabeledCorpus {
            inner: self.inner.materialize(&pool.inner).map_err(value_err)?,
        })
    }

    /// Full result (picks, stages, R, counts) as a JSON string.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Selection(picks={}, r={:.4}, seed={})",
            self.inner.len(),
            self.inner.achieved_r,
            self.inner.seed
        )
    }
}

fn build_params(
    size: Option<usize>,
    ratio: Option<f64>,
    seed: u64,
    expansion: &str,
    dimensions: Option<Vec<String>>,
) -> PyResult<SelectionParams> {
    let target = match (size, ratio) {
        (Some(n), None) => SelectionTarget::Count(n),
        (None, Some(r)) => SelectionTarget::Ratio(r),
        _ => return Err(value_err("pass exactly one of size= or ratio=")),
    };
    let mask = match dimensions {
        None => DimensionMask::default(),
        Some(names) => {
            let mut mask = DimensionMask {
                cognition: false,
                domain: false,
                task: false,
            };
            for name in names {
                match parse_dimension(&name)? {
                    Dimension::Cognition => mask.cognition = true,
                    Dimension::Domain => mask.domain = true,
                    Dimension::Task => mask.task = true,
                }
            }
            mask
        }
    };
    Ok(SelectionParams {
        target,
        seed,
        expansion: parse_expansion(expansion)?,
        mask,
    })
}

/// Diversity-driven selection over the pool's own composite set.
#[pyfunction]
#[pyo3(signature = (pool, size = None, ratio = None, seed = 0, expansion = "all", dimensions = None))]
fn select_general(
    pool: &PyLabeledCorpus,
    size: Option<usize>,
    ratio: Option<f64>,
    seed: u64,
    expansion: &str,
    dimensions: Option<Vec<String>>,
) -> PyResult<PySelection> {
    let params = build_params(size, ratio, seed, expansion, dimensions)?;
    Ok(PySelection {
        inner: selection::select_general(&pool.inner, &params).map_err(value_err)?,
    })
}

/// Capability-oriented selection against a validation corpus.
#[pyfunction]
#[pyo3(signature = (pool, valid, size = None, ratio = None, seed = 0, expansion = "all"))]
fn select_specific(
    pool: &PyLabeledCorpus,
    valid: &PyLabeledCorpus,
    size: Option<usize>,
    ratio: Option<f64>,
    seed: u64,
    expansion: &str,
) -> PyResult<PySelection> {
    let params = build_params(size, ratio, seed, expansion, None)?;
    Ok(PySelection {
        inner: selection::select_specific(&pool.inner, &valid.inner, &params)
            .map_err(value_err)?,
    })
}

/// Coverage and balance report for a labeled corpus, as a JSON string.
#[pyfunction]
#[pyo3(signature = (corpus, taxonomy, name = "dataset", expansion = "all", base = "e"))]
fn evaluate(
    corpus: &PyLabeledCorpus,
    taxonomy: &PyTaxonomy,
    name: &str,
    expansion: &str,
    base: &str,
) -> PyResult<String> {
    let report = metrics::evaluate_dataset(
        name,
        &corpus.inner,
        &taxonomy.inner,
        parse_expansion(expansion)?,
        LogBase::from_str(base).map_err(value_err)?,
    )
    .map_err(value_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

/// Per-dimension distribution comparison of two corpora, as a JSON string.
#[pyfunction]
fn distribution_compare(a: &PyLabeledCorpus, b: &PyLabeledCorpus) -> PyResult<String> {
    let cmp = metrics::distribution_compare(&a.inner, &b.inner).map_err(value_err)?;
    serde_json::to_string(&cmp).map_err(value_err)
}

/// Tags a raw JSONL corpus with the deterministic offline stub and writes
/// labeled JSONL. Returns (tagged, skipped) line counts.
#[pyfunction]
#[pyo3(signature = (input, output, taxonomy, seed = 0, dedup = false))]
fn stub_tag_jsonl(
    input: PathBuf,
    output: PathBuf,
    taxonomy: &PyTaxonomy,
    seed: u64,
    dedup: bool,
) -> PyResult<(usize, usize)> {
    let file = std::fs::File::open(&input).map_err(io_err)?;
    let outcome = ingest(std::io::BufReader::new(file), IngestOptions { dedup })
        .map_err(value_err)?;
    let stub = StubTagger::new(taxonomy.inner.clone());
    let options = TagOptions {
        requests_per_second: None,
        base_seed: seed,
        ..TagOptions::default()
    };
    let run = tag_corpus(&outcome.corpus, &stub, &taxonomy.inner, &options).map_err(value_err)?;
    let written = run.labeled.export_to_path(&output).map_err(io_err)?;
    Ok((written, outcome.skipped + run.failures.len()))
}

#[pymodule]
fn cdt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTaxonomy>()?;
    m.add_class::<PyLabeledCorpus>()?;
    m.add_class::<PySelection>()?;
    m.add_function(wrap_pyfunction!(select_general, m)?)?;
    m.add_function(wrap_pyfunction!(select_specific, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(distribution_compare, m)?)?;
    m.add_function(wrap_pyfunction!(stub_tag_jsonl, m)?)?;
    Ok(())
}
