//! Command implementations behind the `ragrepair` binary. Commands write to
//! caller-supplied streams and return a process exit code.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{
    build_corpus_index, collect_source_paths, fingerprint_files, load_index, save_index, CorpusError, CorpusIndex,
    Span,
};
use crate::embedding::{build_embedder, EmbeddingError, EmbeddingProviderConfig};
use crate::llm::{build_llm, LlmError, LlmProviderConfig};
use crate::pipeline::{run_repair, ClockKind, PipelineConfig, Providers, RepairRun, RunLog};
use crate::sig_retrieval::{
    build_sig_pool, query_from_buggy_lines, retrieve_signatures, rewrite_sig_query, BugContext, FailingTest,
    FaultLocalization, RankedCandidate,
};
use crate::snip_retrieval::{retrieve_snippets, SimilarityWeights, SnipError};
use crate::validation::{build_validator, ValidationError, ValidatorConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("unknown bug id {0:?}")]
    UnknownBug(String),
    #[error("bug {id}: {reason}")]
    Bug { id: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn yes() -> bool {
    true
}
fn default_sig_k() -> usize {
    25
}
fn default_snip_k_each() -> usize {
    15
}
fn default_sig_iterations() -> usize {
    20
}
fn default_snip_samples() -> usize {
    10
}
fn default_snip_top_files() -> usize {
    5
}
fn half() -> f64 {
    0.5
}
fn default_target() -> f64 {
    1.0
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_weight_iterations() -> usize {
    50
}
fn default_deadline_hours() -> f64 {
    5.0
}

/// Everything one `repair` or `retrieve` invocation needs. Relative paths
/// are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub project_root: PathBuf,
    /// Directory holding one `<id>.toml` bug spec per bug.
    pub bug_spec_path: PathBuf,
    pub index_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub embedding: EmbeddingProviderConfig,
    #[serde(default)]
    pub llm: LlmProviderConfig,
    #[serde(default)]
    pub validator: ValidatorConfig,
    #[serde(default = "yes")]
    pub enable_base: bool,
    #[serde(default = "yes")]
    pub enable_sig: bool,
    #[serde(default = "yes")]
    pub enable_snip: bool,
    #[serde(default = "default_sig_k")]
    pub sig_k: usize,
    #[serde(default = "default_snip_k_each")]
    pub snip_k_each: usize,
    #[serde(default = "default_sig_iterations")]
    pub sig_iterations: usize,
    #[serde(default = "default_snip_samples")]
    pub snip_samples: usize,
    #[serde(default = "default_snip_top_files")]
    pub snip_top_files: usize,
    #[serde(default = "yes")]
    pub rewriting_enabled: bool,
    #[serde(default = "half")]
    pub alpha_init: f64,
    #[serde(default = "half")]
    pub beta_init: f64,
    #[serde(default = "default_target")]
    pub target_similarity: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_iterations")]
    pub max_weight_iterations: usize,
    #[serde(default = "default_deadline_hours")]
    pub deadline_hours: f64,
    /// `logical` makes run-log timestamps depend only on event order.
    #[serde(default)]
    pub log_clock: ClockKind,
    #[serde(default)]
    pub include: Vec<String>,
    #[serde(default)]
    pub exclude: Vec<String>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.project_root);
        resolve(base, &mut self.bug_spec_path);
        resolve(base, &mut self.index_path);
        resolve(base, &mut self.output_dir);
        for p in [
            self.embedding.cache_path.as_mut(),
            self.llm.transcript_path.as_mut(),
            self.validator.scratch_dir.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let knobs = [
            ("sig_k", self.sig_k),
            ("snip_k_each", self.snip_k_each),
            ("sig_iterations", self.sig_iterations),
            ("snip_samples", self.snip_samples),
            ("snip_top_files", self.snip_top_files),
            ("max_weight_iterations", self.max_weight_iterations),
        ];
        if let Some((name, _)) = knobs.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("{name} must be positive")));
        }
        if self.deadline_hours.is_nan() || self.deadline_hours <= 0.0 {
            return Err(CliError::Config("deadline_hours must be positive".into()));
        }
        self.weights()
            .validate()
            .map_err(|e| CliError::Config(format!("alpha_init/beta_init: {e}")))?;
        self.embedding.validate()?;
        Ok(())
    }

    pub fn weights(&self) -> SimilarityWeights {
        SimilarityWeights {
            alpha: self.alpha_init,
            beta: self.beta_init,
            target_similarity: self.target_similarity,
            learning_rate: self.learning_rate,
            max_iterations: self.max_weight_iterations,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            enable_base: self.enable_base,
            enable_sig: self.enable_sig,
            enable_snip: self.enable_snip,
            sig_k: self.sig_k,
            sig_iterations: self.sig_iterations,
            snip_k_each: self.snip_k_each,
            snip_samples: self.snip_samples,
            snip_top_files: self.snip_top_files,
            rewriting_enabled: self.rewriting_enabled,
            weights: self.weights(),
            deadline_ms: (self.deadline_hours * 3_600_000.0).round() as u64,
        }
    }
}

/// On-disk description of one bug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BugSpec {
    pub id: String,
    /// Project-relative path of the buggy file.
    pub file: String,
    /// Name or qualified name of the buggy function. When omitted, the
    /// function containing the first fault line is used.
    #[serde(default)]
    pub function: Option<String>,
    /// Exact span of the buggy function, an alternative to `function`.
    #[serde(default)]
    pub span: Option<Span>,
    pub fault_lines: Vec<usize>,
    #[serde(default)]
    pub failing_tests: Vec<FailingTest>,
    #[serde(default)]
    pub error_messages: Vec<String>,
    #[serde(default)]
    pub ground_truth_fix: Option<String>,
    /// Scripted-provider transcript for this bug, relative to the spec file.
    #[serde(default)]
    pub llm_transcript: Option<PathBuf>,
}

/// All bug specs in `dir`, sorted by id.
pub fn load_bug_specs(dir: &Path) -> Result<Vec<BugSpec>, CliError> {
    let mut specs = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut spec: BugSpec =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(t) = spec.llm_transcript.as_mut() {
            resolve(dir, t);
        }
        specs.push(spec);
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = BTreeSet::new();
    if let Some(dup) = specs.iter().find(|s| !seen.insert(s.id.clone())) {
        return Err(CliError::Config(format!("duplicate bug id {:?}", dup.id)));
    }
    Ok(specs)
}

pub fn resolve_bug(spec: &BugSpec, index: &CorpusIndex, project_root: &Path) -> Result<BugContext, CliError> {
    let bug_err = |reason: String| CliError::Bug {
        id: spec.id.clone(),
        reason,
    };
    let first_line = *spec
        .fault_lines
        .first()
        .ok_or_else(|| bug_err("no fault_lines".into()))?;
    let named: Vec<_> = index
        .file_records(&spec.file)
        .filter(|r| {
            spec.function
                .as_deref()
                .is_none_or(|f| r.qualified_name == f || r.name() == f)
                && spec.span.is_none_or(|s| r.span == s)
        })
        .collect();
    let chosen = named
        .iter()
        .find(|r| r.span.contains_line(first_line))
        .or(if named.len() == 1 { named.first() } else { None })
        .ok_or_else(|| {
            bug_err(format!(
                "no function {}in {} contains line {first_line}",
                spec.function.as_deref().map(|f| format!("named {f} ")).unwrap_or_default(),
                spec.file
            ))
        })?;
    let bug = BugContext {
        bug_id: spec.id.clone(),
        project_root: project_root.to_path_buf(),
        buggy_function: (*chosen).clone(),
        failing_tests: spec.failing_tests.clone(),
        error_messages: spec.error_messages.clone(),
        fault_localization: FaultLocalization {
            file_path: spec.file.clone(),
            lines: spec.fault_lines.clone(),
        },
        ground_truth_fix: spec.ground_truth_fix.clone(),
    };
    bug.validate(index).map_err(|e| bug_err(e.to_string()))?;
    Ok(bug)
}

/// Load the persisted index, rebuilding it when missing or out of date.
pub fn ensure_index(cfg: &RunConfig) -> Result<CorpusIndex, CliError> {
    let paths = collect_source_paths(&cfg.project_root, &cfg.include, &cfg.exclude)?;
    let mut files = Vec::with_capacity(paths.len());
    for rel in paths {
        let full = cfg.project_root.join(&rel);
        let bytes = fs::read(&full).map_err(io_err(&full))?;
        files.push((rel, bytes));
    }
    let current = fingerprint_files(files.iter().map(|(p, b)| (p.as_str(), b.as_slice())));
    if cfg.index_path.is_file() {
        match load_index(&cfg.index_path) {
            Ok(index) if index.corpus_fingerprint == current => return Ok(index),
            Ok(_) => log::info!("index at {} is stale, rebuilding", cfg.index_path.display()),
            Err(e) => log::warn!("ignoring unreadable index {}: {e}", cfg.index_path.display()),
        }
    }
    let built = build_corpus_index(&cfg.project_root, &cfg.include, &cfg.exclude)?;
    for d in &built.diagnostics {
        log::warn!("{d}");
    }
    save_index(&built.index, &cfg.index_path)?;
    Ok(built.index)
}

pub fn cmd_index(
    project: &Path,
    out_path: &Path,
    include: &[String],
    exclude: &[String],
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let built = match build_corpus_index(project, include, exclude) {
        Ok(b) => b,
        Err(e @ CorpusError::EmptyCorpus) => {
            let _ = writeln!(err, "error: {e} under {}", project.display());
            return 2;
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    for d in &built.diagnostics {
        let _ = writeln!(err, "{d}");
    }
    if let Err(e) = save_index(&built.index, out_path) {
        let _ = writeln!(err, "error: {e}");
        return 1;
    }
    let _ = writeln!(out, "indexed {} functions", built.index.len());
    let _ = writeln!(out, "fingerprint {}", built.index.corpus_fingerprint);
    0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub bug_id: String,
    pub outcome: String,
    pub fixing_stage: Option<String>,
    pub patches: [usize; 3],
    pub llm_calls: usize,
    pub wall_clock_ms: u64,
    pub log: PathBuf,
}

impl SummaryRow {
    fn from_run(run: &RepairRun, log: PathBuf) -> Self {
        Self {
            bug_id: run.bug.bug_id.clone(),
            outcome: run.outcome.label().to_string(),
            fixing_stage: run.fixing_stage.map(|s| s.as_str().to_string()),
            patches: [run.counters.base, run.counters.sig, run.counters.snip],
            llm_calls: run.llm_calls,
            wall_clock_ms: run.wall_clock_ms,
            log,
        }
    }
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let id_w = rows.iter().map(|r| r.bug_id.len()).max().unwrap_or(0).max("bug".len());
    let mut s = format!("{:<id_w$}  {:<17}  {:<10}  {:<20}  wall_clock_ms\n", "bug", "outcome", "stage", "patches");
    for r in rows {
        let stage = format!("stage={}", r.fixing_stage.as_deref().unwrap_or("-"));
        let patches = format!("patches={}/{}/{}", r.patches[0], r.patches[1], r.patches[2]);
        s.push_str(&format!(
            "{:<id_w$}  {:<17}  {:<10}  {:<20}  {}\n",
            r.bug_id,
            format!("outcome={}", r.outcome),
            stage,
            patches,
            r.wall_clock_ms
        ));
    }
    s
}

fn select_specs(specs: Vec<BugSpec>, bug: &str) -> Result<Vec<BugSpec>, CliError> {
    if bug == "all" {
        return Ok(specs);
    }
    let chosen: Vec<BugSpec> = specs.into_iter().filter(|s| s.id == bug).collect();
    if chosen.is_empty() {
        return Err(CliError::UnknownBug(bug.to_string()));
    }
    Ok(chosen)
}

fn llm_config_for(cfg: &RunConfig, spec: &BugSpec) -> LlmProviderConfig {
    let mut llm = cfg.llm.clone();
    if let Some(t) = &spec.llm_transcript {
        llm.transcript_path = Some(t.clone());
    }
    llm
}

struct Prepared {
    cfg: RunConfig,
    index: CorpusIndex,
    bugs: Vec<(BugSpec, BugContext)>,
}

fn prepare(config_path: &Path, bug: &str) -> Result<Prepared, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let specs = select_specs(load_bug_specs(&cfg.bug_spec_path)?, bug)?;
    let index = ensure_index(&cfg)?;
    let bugs = specs
        .into_iter()
        .map(|s| resolve_bug(&s, &index, &cfg.project_root).map(|b| (s, b)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared { cfg, index, bugs })
}

fn repair_one(
    prepared: &Prepared,
    spec: &BugSpec,
    bug: &BugContext,
    embedder: &dyn crate::embedding::Embedder,
    validator: &dyn crate::validation::PatchValidator,
) -> Result<SummaryRow, CliError> {
    let cfg = &prepared.cfg;
    // A provider per bug keeps scripted cursors independent of scheduling.
    let llm = build_llm(&llm_config_for(cfg, spec))?;
    let log_path = cfg.output_dir.join(format!("{}.log", spec.id));
    let mut log = RunLog::to_file(&log_path, cfg.log_clock.make()).map_err(io_err(&log_path))?;
    log.event("config", &json!({"bug_id": spec.id, "effective_config": cfg, "bug_spec": spec}));
    let run = run_repair(
        bug,
        &prepared.index,
        Providers {
            llm: llm.as_ref(),
            embedder,
            validator,
        },
        &cfg.pipeline_config(),
        &mut log,
    );
    log.finish().map_err(io_err(&log_path))?;
    Ok(SummaryRow::from_run(&run, log_path))
}

pub fn cmd_repair(config_path: &Path, bug: &str, parallel: usize, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match repair_inner(config_path, bug, parallel) {
        Ok((rows, summary_path)) => {
            let _ = write!(out, "{}", format_summary(&rows));
            let _ = writeln!(out, "summary written to {}", summary_path.display());
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn repair_inner(config_path: &Path, bug: &str, parallel: usize) -> Result<(Vec<SummaryRow>, PathBuf), CliError> {
    let prepared = prepare(config_path, bug)?;
    let cfg = &prepared.cfg;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let embedder = build_embedder(&cfg.embedding)?;
    let validator = build_validator(&cfg.validator)?;
    // Surface provider misconfiguration before any run starts.
    for (spec, _) in &prepared.bugs {
        build_llm(&llm_config_for(cfg, spec))?;
    }

    let work = |(spec, bug): &(BugSpec, BugContext)| repair_one(&prepared, spec, bug, &embedder, validator.as_ref());
    let results: Vec<Result<SummaryRow, CliError>> = if parallel > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        pool.install(|| prepared.bugs.par_iter().map(work).collect())
    } else {
        prepared.bugs.iter().map(work).collect()
    };
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let txt = cfg.output_dir.join("summary.txt");
    fs::write(&txt, format_summary(&rows)).map_err(io_err(&txt))?;
    let json_path = cfg.output_dir.join("summary.json");
    let body = serde_json::to_string_pretty(&rows).expect("summary serializes");
    fs::write(&json_path, body + "\n").map_err(io_err(&json_path))?;
    Ok((rows, txt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieveStage {
    Sig,
    Snip,
}

fn format_rows(cands: &[RankedCandidate]) -> String {
    let mut s = String::from("# rank  score      pool        function  location\n");
    for c in cands {
        s.push_str(&format!(
            "{:>6}  {:<9.6}  {:<10}  {}  {}:{}\n",
            c.rank, c.score, c.pool, c.record.qualified_name, c.record.file_path, c.record.span.start
        ));
    }
    s
}

pub fn cmd_retrieve(
    config_path: &Path,
    bug: &str,
    stage: RetrieveStage,
    k: Option<usize>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let prepared = match prepare(config_path, bug) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let Some((spec, bug)) = prepared.bugs.first() else {
        let _ = writeln!(err, "error: no bug selected");
        return 1;
    };
    let cfg = &prepared.cfg;
    let embedder = match build_embedder(&cfg.embedding) {
        Ok(e) => e,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let result = match stage {
        RetrieveStage::Sig => {
            let pool = build_sig_pool(bug, &prepared.index);
            if pool.is_empty() {
                let _ = writeln!(err, "error: signature pool for {} is empty", spec.id);
                return 2;
            }
            let query = if cfg.rewriting_enabled {
                build_llm(&llm_config_for(cfg, spec))
                    .map_err(CliError::from)
                    .and_then(|llm| rewrite_sig_query(bug, llm.as_ref()).map_err(|e| CliError::Config(e.to_string())))
                    .map(|o| o.query)
            } else {
                Ok(query_from_buggy_lines(bug))
            };
            query.and_then(|q| {
                let _ = writeln!(out, "# query: {}", q.combined_text);
                retrieve_signatures(&q, &pool, k.unwrap_or(cfg.sig_k), &embedder).map_err(CliError::from)
            })
        }
        RetrieveStage::Snip => {
            match retrieve_snippets(
                bug,
                &prepared.index,
                &cfg.weights(),
                k.unwrap_or(cfg.snip_k_each),
                cfg.snip_top_files,
                &embedder,
            ) {
                Ok(r) => {
                    let _ = writeln!(out, "# alpha={} beta={}", r.weights.alpha, r.weights.beta);
                    Ok(r.candidates)
                }
                Err(SnipError::EmptyPools) => {
                    let _ = writeln!(err, "error: both snippet pools for {} are empty", spec.id);
                    return 2;
                }
                Err(e) => Err(CliError::Config(e.to_string())),
            }
        }
    };
    match result {
        Ok(cands) => {
            let _ = write!(out, "{}", format_rows(&cands));
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
