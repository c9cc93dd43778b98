//! The `cdt` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on input or validation errors, 2 on
//! backend or I/O failures. Every run materializes its seed (generating
//! and printing one when absent) and every output file is accompanied by
//! a `<output>.manifest.json` recording inputs, parameters, seed,
//! taxonomy version, and counts, sufficient to re-run the command
//! identically.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ingest, stream_labeled_jsonl, CompositeMultiset, CorpusError, Expansion, IngestOptions,
    LabeledCorpus, DEFAULT_VALIDATION_CAP,
};
use crate::metrics::{report_from_parts, EvaluationReport, LogBase};
use crate::selection::{
    select_general, select_specific, selection_report, DimensionMask, SelectionParams,
    SelectionTarget,
};
use crate::tagging::{
    tag_corpus, HttpBackend, PromptTemplates, StubTagger, TagOptions, TagPolicy, TaggerBackend,
    TaggingError,
};
use crate::taxonomy::{Dimension, Taxonomy};

#[derive(Debug, Parser)]
#[command(
    name = "cdt",
    version,
    about = "Capability-aware dataset curation: tag, evaluate, and select instruction data"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Taxonomy document (defaults to the bundled taxonomy).
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,

    /// Seed for all randomness; generated and printed when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log level for stderr diagnostics (error|warn|info|debug|trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a taxonomy document and print its dimension sizes.
    TaxonomyCheck,
    /// Annotate a JSONL corpus with capability labels.
    Tag(TagArgs),
    /// Compute coverage and balance metrics for a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Diversity-driven subset selection from a labeled pool.
    SelectGeneral(SelectGeneralArgs),
    /// Capability-oriented subset selection against a validation set.
    SelectSpecific(SelectSpecificArgs),
    /// Merge evaluation reports (and optional scores) into one CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TagArgs {
    /// Input JSONL corpus.
    #[arg(long)]
    input: PathBuf,

    /// Output labeled JSONL file.
    #[arg(long)]
    output: PathBuf,

    /// Tagger backend: "stub" (offline, deterministic) or "http".
    #[arg(long)]
    backend: Option<String>,

    /// Chat-completions endpoint URL (http backend).
    #[arg(long)]
    endpoint: Option<String>,

    /// Model name sent to the endpoint (http backend).
    #[arg(long)]
    model: Option<String>,

    /// Name of the environment variable holding the API key. The key
    /// itself never appears on the command line or in logs.
    #[arg(long)]
    api_key_env: Option<String>,

    /// Maximum in-flight backend calls.
    #[arg(long)]
    parallelism: Option<usize>,

    /// Backend requests per second (token bucket); 0 disables limiting.
    #[arg(long)]
    rps: Option<f64>,

    /// Attempts per record and dimension before marking it untaggable.
    #[arg(long, default_value_t = 3)]
    max_retries: u32,

    /// Append-only checkpoint file; restarts resume from it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Collapse records with identical (instruction, input) pairs.
    #[arg(long)]
    dedup: bool,

    /// Prompt template file overriding the built-in template.
    #[arg(long)]
    prompt_template: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Labeled JSONL corpus.
    #[arg(long)]
    input: PathBuf,

    /// Dataset name in the report (defaults to the input file stem).
    #[arg(long)]
    name: Option<String>,

    /// Composite expansion mode: "all" or "first".
    #[arg(long)]
    expansion: Option<String>,

    /// Entropy log base: "e" (nats) or "2" (bits).
    #[arg(long, default_value = "e")]
    base: String,

    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Also write the per-dimension frequency tables as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectGeneralArgs {
    /// Labeled JSONL pool.
    #[arg(long)]
    pool: PathBuf,

    /// Absolute subset size.
    #[arg(long, conflicts_with = "ratio")]
    size: Option<usize>,

    /// Subset size as a fraction of the pool in (0, 1].
    #[arg(long)]
    ratio: Option<f64>,

    /// Composite expansion mode: "all" or "first".
    #[arg(long)]
    expansion: Option<String>,

    /// Dimensions forming the composite key, comma-separated
    /// (e.g. "cognition" or "cognition,domain,task").
    #[arg(long)]
    dimensions: Option<String>,

    /// Output labeled JSONL of the selected records, in pick order.
    #[arg(long)]
    output: PathBuf,

    /// JSON selection report (defaults to <output>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectSpecificArgs {
    /// Labeled JSONL pool.
    #[arg(long)]
    pool: PathBuf,

    /// Labeled JSONL validation set describing the target capabilities.
    #[arg(long)]
    valid: PathBuf,

    /// Absolute subset size.
    #[arg(long, conflicts_with = "ratio")]
    size: Option<usize>,

    /// Subset size as a fraction of the pool in (0, 1].
    #[arg(long)]
    ratio: Option<f64>,

    /// Composite expansion mode: "all" or "first".
    #[arg(long)]
    expansion: Option<String>,

    /// Cap applied to the validation set before selection.
    #[arg(long, default_value_t = DEFAULT_VALIDATION_CAP)]
    cap: usize,

    /// Output labeled JSONL of the selected records, in pick order.
    #[arg(long)]
    output: PathBuf,

    /// JSON selection report (defaults to <output>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Evaluation report JSON files to merge.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,

    /// CSV with `dataset,score` columns to join on dataset name.
    #[arg(long)]
    scores: Option<PathBuf>,

    /// Output CSV path.
    #[arg(long)]
    output: PathBuf,
}

/// Errors split by exit code: input/validation problems exit 1, backend
/// and I/O failures exit 2.
#[derive(Debug)]
enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn corpus_err(e: CorpusError) -> CliError {
    match &e {
        CorpusError::Io(_) | CorpusError::ExportIo { .. } => runtime_err(e),
        CorpusError::Line { source, .. } => match source.as_ref() {
            CorpusError::Io(_) | CorpusError::ExportIo { .. } => runtime_err(e),
            _ => input_err(e),
        },
        _ => input_err(e),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };

    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(cli.log.clone())),
        )
        .with_writer(std::io::stderr)
        .try_init();

    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            tracing::error!("{}", err.message());
            err.exit_code()
        }
    }
}

/// Optional TOML config; flags take precedence over its values.
#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    taxonomy: Option<PathBuf>,
    seed: Option<u64>,
    expansion: Option<String>,
    #[serde(default)]
    backend: BackendConfig,
}

#[derive(Debug, Default, Deserialize)]
struct BackendConfig {
    kind: Option<String>,
    endpoint: Option<String>,
    model: Option<String>,
    api_key_env: Option<String>,
    requests_per_second: Option<f64>,
    parallelism: Option<usize>,
}

struct RunContext {
    taxonomy: Taxonomy,
    taxonomy_path: Option<PathBuf>,
    seed: u64,
    config: ConfigFile,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config: ConfigFile = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| input_err(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| input_err(format!("invalid config {}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };

    let taxonomy_path = cli.taxonomy.clone().or_else(|| config.taxonomy.clone());
    let taxonomy = match &taxonomy_path {
        Some(path) => Taxonomy::from_path(path).map_err(input_err)?,
        None => Taxonomy::bundled().map_err(input_err)?,
    };

    // Materialize the seed so every run is replayable.
    let seed = cli.seed.or(config.seed).unwrap_or_else(|| {
        let generated: u64 = rand::random();
        tracing::info!(seed = generated, "no seed given; generated one");
        generated
    });
    tracing::info!(seed, taxonomy = taxonomy.version(), "run configuration");

    let ctx = RunContext {
        taxonomy,
        taxonomy_path,
        seed,
        config,
    };

    match cli.command {
        Command::TaxonomyCheck => taxonomy_check(&ctx),
        Command::Tag(args) => tag(&ctx, args),
        Command::Evaluate(args) => evaluate(&ctx, args),
        Command::SelectGeneral(args) => run_select_general(&ctx, args),
        Command::SelectSpecific(args) => run_select_specific(&ctx, args),
        Command::Report(args) => merge_reports(&ctx, args),
    }
}

/// Machine-readable record of one run, written beside each output file.
/// Deliberately timestamp-free so identical runs produce identical bytes.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    seed: u64,
    taxonomy_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    taxonomy_path: Option<String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    params: BTreeMap<String, serde_json::Value>,
    counts: BTreeMap<String, u64>,
}

impl RunManifest {
    fn new(command: &str, ctx: &RunContext) -> Self {
        Self {
            command: command.to_string(),
            seed: ctx.seed,
            taxonomy_version: ctx.taxonomy.version().to_string(),
            taxonomy_path: ctx
                .taxonomy_path
                .as_ref()
                .map(|p| p.display().to_string()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params: BTreeMap::new(),
            counts: BTreeMap::new(),
        }
    }

    fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.display().to_string());
        self
    }

    fn output(mut self, name: &str, path: &Path) -> Self {
        self.outputs.insert(name.to_string(), path.display().to_string());
        self
    }

    fn param(mut self, name: &str, value: impl Serialize) -> Self {
        self.params.insert(
            name.to_string(),
            serde_json::to_value(value).expect("manifest params serialize"),
        );
        self
    }

    fn count(mut self, name: &str, value: u64) -> Self {
        self.counts.insert(name.to_string(), value);
        self
    }

    /// Writes `<primary_output>.manifest.json`.
    fn write(self, primary_output: &Path) -> Result<(), CliError> {
        let path = manifest_path(primary_output);
        let json = serde_json::to_string_pretty(&self).map_err(runtime_err)?;
        std::fs::write(&path, json.as_bytes())
            .map_err(|e| runtime_err(format!("cannot write manifest {}: {e}", path.display())))?;
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn taxonomy_check(ctx: &RunContext) -> Result<(), CliError> {
    let t = &ctx.taxonomy;
    println!(
        "taxonomy {} ok: cognition={} domain={} task={}",
        t.version(),
        t.len(Dimension::Cognition),
        t.len(Dimension::Domain),
        t.len(Dimension::Task),
    );
    println!(
        "({}, {}, {}, {})",
        t.len(Dimension::Cognition),
        t.len(Dimension::Domain),
        t.len(Dimension::Task),
        t.composite_space_size(),
    );
    Ok(())
}

fn parse_expansion(flag: &Option<String>, ctx: &RunContext) -> Result<Expansion, CliError> {
    match flag.as_ref().or(ctx.config.expansion.as_ref()) {
        Some(s) => s.parse().map_err(input_err),
        None => Ok(Expansion::default()),
    }
}

fn parse_mask(flag: &Option<String>) -> Result<DimensionMask, CliError> {
    let Some(spec) = flag else {
        return Ok(DimensionMask::default());
    };
    let mut mask = DimensionMask {
        cognition: false,
        domain: false,
        task: false,
    };
    for part in spec.split(',') {
        match part.trim().to_ascii_lowercase().as_str() {
            "cognition" | "c" => mask.cognition = true,
            "domain" | "d" => mask.domain = true,
            "task" | "t" => mask.task = true,
            other => {
                return Err(input_err(format!(
                    "unknown dimension {other:?} (expected cognition, domain, task)"
                )))
            }
        }
    }
    Ok(mask)
}

fn parse_target(size: Option<usize>, ratio: Option<f64>) -> Result<SelectionTarget, CliError> {
    match (size, ratio) {
        (Some(n), None) => Ok(SelectionTarget::Count(n)),
        (None, Some(r)) => Ok(SelectionTarget::Ratio(r)),
        (None, None) => Err(input_err("one of --size or --ratio is required")),
        (Some(_), Some(_)) => Err(input_err("--size and --ratio are mutually exclusive")),
    }
}

fn tag(ctx: &RunContext, args: TagArgs) -> Result<(), CliError> {
    let file = std::fs::File::open(&args.input)
        .map_err(|e| input_err(format!("cannot open {}: {e}", args.input.display())))?;
    let outcome = ingest(
        BufReader::new(file),
        IngestOptions { dedup: args.dedup },
    )
    .map_err(corpus_err)?;
    tracing::info!(
        records = outcome.corpus.len(),
        skipped = outcome.skipped,
        deduplicated = outcome.deduplicated,
        "ingested corpus"
    );

    let backend_kind = args
        .backend
        .clone()
        .or_else(|| ctx.config.backend.kind.clone())
        .unwrap_or_else(|| "stub".to_string());
    let backend: Box<dyn TaggerBackend> = match backend_kind.as_str() {
        "stub" => Box::new(StubTagger::new(ctx.taxonomy.clone())),
        "http" => {
            let endpoint = args
                .endpoint
                .clone()
                .or_else(|| ctx.config.backend.endpoint.clone())
                .ok_or_else(|| input_err("--endpoint is required with --backend http"))?;
            let model = args
                .model
                .clone()
                .or_else(|| ctx.config.backend.model.clone())
                .unwrap_or_else(|| "default".to_string());
            let api_key = args
                .api_key_env
                .clone()
                .or_else(|| ctx.config.backend.api_key_env.clone())
                .map(|var| {
                    std::env::var(&var).map_err(|_| {
                        input_err(format!("environment variable {var} is not set"))
                    })
                })
                .transpose()?;
            Box::new(HttpBackend::new(endpoint, model, api_key))
        }
        other => return Err(input_err(format!("unknown backend {other:?}"))),
    };

    let templates = match &args.prompt_template {
        Some(path) => PromptTemplates::from_path(path)
            .map_err(|e| input_err(format!("cannot read template {}: {e}", path.display())))?,
        None => PromptTemplates::default(),
    };
    let rps = args.rps.or(ctx.config.backend.requests_per_second);
    let options = TagOptions {
        policy: TagPolicy {
            max_retries: args.max_retries,
            reseed_on_retry: true,
        },
        parallelism: args
            .parallelism
            .or(ctx.config.backend.parallelism)
            .unwrap_or(4),
        requests_per_second: match rps {
            Some(r) if r > 0.0 => Some(r),
            Some(_) => None,
            None => Some(4.0),
        },
        checkpoint: args.checkpoint.clone(),
        hard_failure_limit: 10,
        base_seed: ctx.seed,
        templates,
    };

    let run = tag_corpus(&outcome.corpus, backend.as_ref(), &ctx.taxonomy, &options).map_err(
        |e| match e {
            TaggingError::EmptyCorpus => input_err(e),
            TaggingError::Corpus(inner) => corpus_err(inner),
            _ => runtime_err(e),
        },
    )?;

    let written = run.labeled.export_to_path(&args.output).map_err(runtime_err)?;
    tracing::info!(
        tagged = written,
        untaggable = run.failures.len(),
        resumed = run.resumed,
        retry_events = run.retry_events,
        "tagging finished"
    );

    let failures_path = args.output.with_file_name({
        let mut name = args.output.file_name().unwrap_or_default().to_os_string();
        name.push(".failures.json");
        name
    });
    if !run.failures.is_empty() {
        let failures: Vec<serde_json::Value> = run
            .failures
            .iter()
            .map(|f| serde_json::json!({"record_id": f.record_id, "error": f.error}))
            .collect();
        std::fs::write(
            &failures_path,
            serde_json::to_string_pretty(&failures).map_err(runtime_err)?,
        )
        .map_err(runtime_err)?;
    }

    let mut manifest = RunManifest::new("tag", ctx)
        .input("input", &args.input)
        .output("labeled", &args.output)
        .param("backend", backend.identity())
        .param("dedup", args.dedup)
        .param("max_retries", args.max_retries)
        .count("records_in", (outcome.corpus.len()) as u64)
        .count("skipped", outcome.skipped as u64)
        .count("deduplicated", outcome.deduplicated as u64)
        .count("tagged", written as u64)
        .count("untaggable", run.failures.len() as u64)
        .count("resumed", run.resumed as u64)
        .count("retry_events", run.retry_events as u64);
    if !run.failures.is_empty() {
        manifest = manifest.output("failures", &failures_path);
    }
    if let Some(checkpoint) = &args.checkpoint {
        manifest = manifest.param("checkpoint", checkpoint.display().to_string());
    }
    manifest.write(&args.output)
}

fn evaluate(ctx: &RunContext, args: EvaluateArgs) -> Result<(), CliError> {
    let expansion = parse_expansion(&args.expansion, ctx)?;
    let base: LogBase = args.base.parse().map_err(input_err)?;
    let name = args.name.clone().unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    });

    // Stream the corpus: only counts are held in memory.
    let file = std::fs::File::open(&args.input)
        .map_err(|e| input_err(format!("cannot open {}: {e}", args.input.display())))?;
    let mut multiset = CompositeMultiset::default();
    let mut marginals: BTreeMap<Dimension, BTreeMap<String, u64>> = BTreeMap::new();
    for dim in Dimension::ALL {
        marginals.insert(dim, BTreeMap::new());
    }
    let mut records = 0usize;
    stream_labeled_jsonl(BufReader::new(file), &ctx.taxonomy, |_, annotation| {
        for triplet in annotation.composites(expansion) {
            multiset.add(triplet, 1);
        }
        let cog = marginals.get_mut(&Dimension::Cognition).expect("prefilled");
        for tag in &annotation.cognition {
            *cog.entry(tag.clone()).or_insert(0) += 1;
        }
        *marginals
            .get_mut(&Dimension::Domain)
            .expect("prefilled")
            .entry(annotation.domain.clone())
            .or_insert(0) += 1;
        *marginals
            .get_mut(&Dimension::Task)
            .expect("prefilled")
            .entry(annotation.task.clone())
            .or_insert(0) += 1;
        records += 1;
        Ok(())
    })
    .map_err(corpus_err)?;

    let report = report_from_parts(
        &name,
        &ctx.taxonomy,
        expansion,
        base,
        records,
        &multiset,
        &marginals,
    )
    .map_err(input_err)?;

    let json = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
    match &args.output {
        Some(path) => std::fs::write(path, json.as_bytes())
            .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    if let Some(csv_path) = &args.csv {
        write_frequency_csv(csv_path, &report)?;
    }

    // Manifest beside the primary output (the JSON report, or the CSV when
    // the report goes to stdout).
    if let Some(primary) = args.output.as_ref().or(args.csv.as_ref()) {
        let mut manifest = RunManifest::new("evaluate", ctx)
            .input("input", &args.input)
            .param("expansion", expansion.as_str())
            .param("log_base", base.as_str())
            .param("dataset", &report.dataset)
            .count("records", report.records as u64)
            .count("distinct_composites", report.distinct_composites as u64);
        if let Some(path) = &args.output {
            manifest = manifest.output("report", path);
        }
        if let Some(csv_path) = &args.csv {
            manifest = manifest.output("csv", csv_path);
        }
        manifest.write(primary)?;
    }
    tracing::info!(
        dataset = %report.dataset,
        coverage = report.coverage,
        balance = report.balance,
        "evaluation finished"
    );
    Ok(())
}

fn write_frequency_csv(path: &Path, report: &EvaluationReport) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["dimension", "label", "count", "frequency"])
        .map_err(runtime_err)?;
    for table in &report.frequency_tables {
        for row in &table.rows {
            writer
                .write_record([
                    table.dimension.as_str(),
                    row.label.as_str(),
                    &row.count.to_string(),
                    &row.frequency.to_string(),
                ])
                .map_err(runtime_err)?;
        }
    }
    writer.flush().map_err(runtime_err)?;
    Ok(())
}

fn run_select_general(ctx: &RunContext, args: SelectGeneralArgs) -> Result<(), CliError> {
    let pool = LabeledCorpus::read_jsonl_path(&args.pool, &ctx.taxonomy).map_err(corpus_err)?;
    let params = SelectionParams {
        target: parse_target(args.size, args.ratio)?,
        seed: ctx.seed,
        expansion: parse_expansion(&args.expansion, ctx)?,
        mask: parse_mask(&args.dimensions)?,
    };
    let result = select_general(&pool, &params).map_err(input_err)?;
    let selected = result.materialize(&pool).map_err(input_err)?;
    selected.export_to_path(&args.output).map_err(runtime_err)?;

    let report = selection_report(&result, &pool, None).map_err(input_err)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| default_report_path(&args.output));
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).map_err(runtime_err)?,
    )
    .map_err(runtime_err)?;

    tracing::info!(
        selected = result.len(),
        r = result.achieved_r,
        "general selection finished"
    );
    RunManifest::new("select-general", ctx)
        .input("pool", &args.pool)
        .output("selected", &args.output)
        .output("report", &report_path)
        .param("target", params.target)
        .param("expansion", params.expansion.as_str())
        .param("mask", params.mask)
        .count("pool_records", pool.len() as u64)
        .count("selected", result.len() as u64)
        .count("pool_distinct", result.pool_distinct as u64)
        .count("selection_distinct", result.selection_distinct as u64)
        .write(&args.output)
}

fn run_select_specific(ctx: &RunContext, args: SelectSpecificArgs) -> Result<(), CliError> {
    let pool = LabeledCorpus::read_jsonl_path(&args.pool, &ctx.taxonomy).map_err(corpus_err)?;
    let valid_full =
        LabeledCorpus::read_jsonl_path(&args.valid, &ctx.taxonomy).map_err(corpus_err)?;
    if args.cap == 0 {
        return Err(input_err("--cap must be >= 1"));
    }
    let valid = valid_full.cap_validation(args.cap, ctx.seed);
    tracing::info!(
        valid_in = valid_full.len(),
        valid_used = valid.len(),
        cap = args.cap,
        "validation set prepared"
    );

    let params = SelectionParams {
        target: parse_target(args.size, args.ratio)?,
        seed: ctx.seed,
        expansion: parse_expansion(&args.expansion, ctx)?,
        mask: DimensionMask::default(),
    };
    let result = select_specific(&pool, &valid, &params).map_err(input_err)?;
    let selected = result.materialize(&pool).map_err(input_err)?;
    selected.export_to_path(&args.output).map_err(runtime_err)?;

    let report = selection_report(&result, &pool, Some(&valid)).map_err(input_err)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| default_report_path(&args.output));
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).map_err(runtime_err)?,
    )
    .map_err(runtime_err)?;

    let stage_counts: BTreeMap<String, u64> = result
        .stage_counts
        .iter()
        .map(|(stage, count)| (stage.as_str().to_string(), *count as u64))
        .collect();
    tracing::info!(
        selected = result.len(),
        r = result.achieved_r,
        ?stage_counts,
        "specific selection finished"
    );

    let mut manifest = RunManifest::new("select-specific", ctx)
        .input("pool", &args.pool)
        .input("valid", &args.valid)
        .output("selected", &args.output)
        .output("report", &report_path)
        .param("target", params.target)
        .param("expansion", params.expansion.as_str())
        .param("cap", args.cap)
        .count("pool_records", pool.len() as u64)
        .count("valid_records", valid.len() as u64)
        .count("selected", result.len() as u64);
    for (stage, count) in stage_counts {
        manifest = manifest.count(&format!("stage_{stage}"), count);
    }
    manifest.write(&args.output)
}

fn default_report_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    output.with_file_name(name)
}

fn merge_reports(ctx: &RunContext, args: ReportArgs) -> Result<(), CliError> {
    let mut scores: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = &args.scores {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
        let headers = reader.headers().map_err(input_err)?.clone();
        let dataset_idx = headers.iter().position(|h| h == "dataset").ok_or_else(|| {
            input_err(format!("{}: missing `dataset` column", path.display()))
        })?;
        let score_idx = headers.iter().position(|h| h == "score").ok_or_else(|| {
            input_err(format!("{}: missing `score` column", path.display()))
        })?;
        for row in reader.records() {
            let row = row.map_err(input_err)?;
            scores.insert(
                row.get(dataset_idx).unwrap_or_default().to_string(),
                row.get(score_idx).unwrap_or_default().to_string(),
            );
        }
    }

    let mut writer = csv::Writer::from_path(&args.output)
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", args.output.display())))?;
    writer
        .write_record([
            "dataset",
            "taxonomy_version",
            "expansion",
            "log_base",
            "records",
            "total_composites",
            "distinct_composites",
            "coverage",
            "balance",
            "balance_normalized",
            "score",
        ])
        .map_err(runtime_err)?;

    let mut manifest = RunManifest::new("report", ctx).output("csv", &args.output);
    for (i, path) in args.inputs.iter().enumerate() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
        let report: EvaluationReport = serde_json::from_str(&text)
            .map_err(|e| input_err(format!("{} is not an evaluation report: {e}", path.display())))?;
        let score = scores.get(&report.dataset).cloned().unwrap_or_default();
        writer
            .write_record([
                report.dataset.as_str(),
                report.taxonomy_version.as_str(),
                report.expansion.as_str(),
                report.log_base.as_str(),
                &report.records.to_string(),
                &report.total_composites.to_string(),
                &report.distinct_composites.to_string(),
                &report.coverage.to_string(),
                &report.balance.to_string(),
                &report.balance_normalized.to_string(),
                &score,
            ])
            .map_err(runtime_err)?;
        manifest = manifest.input(&format!("report_{i}"), path);
    }
    writer.flush().map_err(runtime_err)?;
    if let Some(path) = &args.scores {
        manifest = manifest.input("scores", path);
    }
    manifest
        .count("reports", args.inputs.len() as u64)
        .write(&args.output)
}
