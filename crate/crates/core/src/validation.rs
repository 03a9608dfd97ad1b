//! Patch verdicts: run a test command against a scratch copy of the project
//! with the patch spliced in, or compare against a known fix.

use std::fs;
use std::io::{Read, Seek};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use wait_timeout::ChildExt;
use walkdir::WalkDir;

use crate::corpus::lexer::lex;
use crate::corpus::{line_span_bytes, Span};
use crate::sig_retrieval::BugContext;

/// Captured process output kept in reports is cut to this many bytes.
pub const MAX_CAPTURED_OUTPUT: usize = 8 * 1024;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("{path}: lines {}-{} no longer match the indexed function", span.start, span.end)]
    StaleSpan { path: String, span: Span },
    #[error("workspace error: {0}")]
    Workspace(String),
    #[error("validator configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Untested,
    CompileError,
    TestsFailed {
        #[serde(default)]
        failing: Vec<String>,
        #[serde(default)]
        timed_out: bool,
    },
    Plausible,
    ExactMatch,
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Plausible | Verdict::ExactMatch)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Untested => "untested",
            Verdict::CompileError => "compile_error",
            Verdict::TestsFailed { timed_out: true, .. } => "timeout",
            Verdict::TestsFailed { .. } => "tests_failed",
            Verdict::Plausible => "plausible",
            Verdict::ExactMatch => "exact_match",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    #[default]
    TestSuite,
    ExactMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WorkspaceStrategy {
    #[default]
    CopyOnValidate,
}

fn default_timeout_ms() -> u64 {
    600_000
}
fn default_compile_patterns() -> Vec<String> {
    vec!["error:".into(), "cannot find symbol".into()]
}
fn default_failing_test_pattern() -> String {
    r"^\s*-\s+(\S+::\S+)\s*$".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorConfig {
    #[serde(default)]
    pub mode: ValidationMode,
    /// Argv template; `{project_root}` is replaced by the scratch copy's path.
    #[serde(default)]
    pub test_command: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub per_patch_timeout_ms: u64,
    #[serde(default)]
    pub workspace_strategy: WorkspaceStrategy,
    /// Output matching any of these means the patch did not compile.
    #[serde(default = "default_compile_patterns")]
    pub compile_error_patterns: Vec<String>,
    /// Multi-line regex whose first group captures a failing test name.
    #[serde(default = "default_failing_test_pattern")]
    pub failing_test_pattern: String,
    /// Byte equality instead of token comparison in exact-match mode.
    #[serde(default)]
    pub strict_exact_match: bool,
    /// Parent for scratch copies; the system temp dir when unset.
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            mode: ValidationMode::TestSuite,
            test_command: Vec::new(),
            per_patch_timeout_ms: default_timeout_ms(),
            workspace_strategy: WorkspaceStrategy::CopyOnValidate,
            compile_error_patterns: default_compile_patterns(),
            failing_test_pattern: default_failing_test_pattern(),
            strict_exact_match: false,
            scratch_dir: None,
        }
    }
}

impl ValidatorConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.mode == ValidationMode::TestSuite && self.test_command.is_empty() {
            return Err(ValidationError::Config("test-suite mode requires test_command".into()));
        }
        if self.per_patch_timeout_ms == 0 {
            return Err(ValidationError::Config("per_patch_timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub verdict: Verdict,
    /// Combined stdout and stderr of the test command, truncated.
    pub output: String,
}

pub trait PatchValidator: Send + Sync {
    fn validate(&self, bug: &BugContext, patch_text: &str) -> Result<ValidationReport, ValidationError>;
}

pub fn build_validator(cfg: &ValidatorConfig) -> Result<Box<dyn PatchValidator>, ValidationError> {
    cfg.validate()?;
    Ok(match cfg.mode {
        ValidationMode::TestSuite => Box::new(TestSuiteValidator::new(cfg.clone())?),
        ValidationMode::ExactMatch => Box::new(ExactMatchValidator {
            strict: cfg.strict_exact_match,
        }),
    })
}

/// Replace lines `span` of `content` with `patch_text`, after checking that
/// those lines still read `expected`. Bytes outside the span are untouched.
pub fn splice_text(
    content: &str,
    path: &str,
    span: Span,
    expected: &str,
    patch_text: &str,
) -> Result<String, ValidationError> {
    let stale = || ValidationError::StaleSpan {
        path: path.to_string(),
        span,
    };
    let range = line_span_bytes(content, span).ok_or_else(stale)?;
    if &content[range.clone()] != expected {
        return Err(stale());
    }
    let patch = patch_text.strip_suffix('\n').unwrap_or(patch_text);
    let mut out = String::with_capacity(content.len() + patch.len());
    out.push_str(&content[..range.start]);
    out.push_str(patch);
    out.push_str(&content[range.end..]);
    Ok(out)
}

pub fn splice(
    project: &Path,
    file_path: &str,
    span: Span,
    expected: &str,
    patch_text: &str,
) -> Result<(), ValidationError> {
    let full = project.join(file_path);
    let content = fs::read_to_string(&full)
        .map_err(|e| ValidationError::Workspace(format!("{}: {e}", full.display())))?;
    let spliced = splice_text(&content, file_path, span, expected, patch_text)?;
    fs::write(&full, spliced).map_err(|e| ValidationError::Workspace(format!("{}: {e}", full.display())))
}

/// Span the patched function occupies after a splice, for reverting.
pub fn spliced_span(span: Span, patch_text: &str) -> Span {
    let patch = patch_text.strip_suffix('\n').unwrap_or(patch_text);
    Span {
        start: span.start,
        end: span.start + patch.matches('\n').count(),
    }
}

/// SHA-256 over every file path and content under `root`, in path order.
pub fn tree_fingerprint(root: &Path) -> std::io::Result<String> {
    let mut h = Sha256::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        let bytes = fs::read(entry.path())?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Recursive copy, skipping `.git`.
fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    let walker = WalkDir::new(from)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || e.file_name() != ".git");
    for entry in walker {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

pub struct TestSuiteValidator {
    cfg: ValidatorConfig,
    compile_patterns: Vec<Regex>,
    failing_test: Regex,
}

impl TestSuiteValidator {
    pub fn new(cfg: ValidatorConfig) -> Result<Self, ValidationError> {
        cfg.validate()?;
        let compile_patterns = cfg
            .compile_error_patterns
            .iter()
            .map(|p| Regex::new(p).map_err(|e| ValidationError::Config(format!("compile_error_patterns: {e}"))))
            .collect::<Result<_, _>>()?;
        let failing_test = Regex::new(&format!("(?m){}", cfg.failing_test_pattern))
            .map_err(|e| ValidationError::Config(format!("failing_test_pattern: {e}")))?;
        Ok(Self {
            cfg,
            compile_patterns,
            failing_test,
        })
    }

    fn workspace(&self) -> Result<tempfile::TempDir, ValidationError> {
        let dir = match &self.cfg.scratch_dir {
            Some(parent) => {
                fs::create_dir_all(parent).map_err(|e| ValidationError::Workspace(e.to_string()))?;
                tempfile::Builder::new().prefix("validate-").tempdir_in(parent)
            }
            None => tempfile::Builder::new().prefix("validate-").tempdir(),
        };
        dir.map_err(|e| ValidationError::Workspace(e.to_string()))
    }

    fn run_command(&self, project: &Path) -> Result<(Option<i32>, bool, String), ValidationError> {
        let root = project.to_string_lossy();
        let argv: Vec<String> = self
            .cfg
            .test_command
            .iter()
            .map(|a| a.replace("{project_root}", &root))
            .collect();
        // Output goes to a file rather than a pipe so a chatty child cannot block.
        let mut sink = tempfile::tempfile().map_err(|e| ValidationError::Workspace(e.to_string()))?;
        let sink_err = sink.try_clone().map_err(|e| ValidationError::Workspace(e.to_string()))?;
        let sink_out = sink.try_clone().map_err(|e| ValidationError::Workspace(e.to_string()))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(project)
            .stdin(Stdio::null())
            .stdout(Stdio::from(sink_out))
            .stderr(Stdio::from(sink_err))
            .spawn()
            .map_err(|e| ValidationError::Workspace(format!("cannot run {}: {e}", argv[0])))?;
        let timeout = Duration::from_millis(self.cfg.per_patch_timeout_ms);
        let (code, timed_out) = match child
            .wait_timeout(timeout)
            .map_err(|e| ValidationError::Workspace(e.to_string()))?
        {
            Some(status) => (status.code(), false),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                (None, true)
            }
        };
        let mut bytes = Vec::new();
        sink.rewind().map_err(|e| ValidationError::Workspace(e.to_string()))?;
        sink.read_to_end(&mut bytes)
            .map_err(|e| ValidationError::Workspace(e.to_string()))?;
        Ok((code, timed_out, String::from_utf8_lossy(&bytes).into_owned()))
    }

    pub fn classify(&self, exit_code: Option<i32>, timed_out: bool, output: &str) -> Verdict {
        if timed_out {
            return Verdict::TestsFailed {
                failing: Vec::new(),
                timed_out: true,
            };
        }
        if exit_code == Some(0) {
            return Verdict::Plausible;
        }
        if self.compile_patterns.iter().any(|re| re.is_match(output)) {
            return Verdict::CompileError;
        }
        let mut failing: Vec<String> = self
            .failing_test
            .captures_iter(output)
            .filter_map(|c| c.get(1).map(|m| m.as_str().to_string()))
            .collect();
        failing.dedup();
        Verdict::TestsFailed {
            failing,
            timed_out: false,
        }
    }
}

fn truncate_output(mut s: String) -> String {
    if s.len() > MAX_CAPTURED_OUTPUT {
        let mut cut = MAX_CAPTURED_OUTPUT;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push_str("\n[output truncated]");
    }
    s
}

impl PatchValidator for TestSuiteValidator {
    fn validate(&self, bug: &BugContext, patch_text: &str) -> Result<ValidationReport, ValidationError> {
        let scratch = self.workspace()?;
        let project = scratch.path().join("project");
        copy_tree(&bug.project_root, &project)
            .map_err(|e| ValidationError::Workspace(format!("copying {}: {e}", bug.project_root.display())))?;
        let f = &bug.buggy_function;
        splice(&project, &f.file_path, f.span, &f.raw_text, patch_text)?;
        let (code, timed_out, output) = self.run_command(&project)?;
        if timed_out {
            log::warn!("{}: validation timed out after {} ms", bug.bug_id, self.cfg.per_patch_timeout_ms);
        }
        Ok(ValidationReport {
            verdict: self.classify(code, timed_out, &output),
            output: truncate_output(output),
        })
    }
}

/// Token stream with comments removed, joined by single spaces. Falls back
/// to whitespace collapsing for text the lexer rejects.
pub fn normalize_tokens(text: &str) -> String {
    match lex(text) {
        Ok(tokens) => tokens
            .iter()
            .filter(|t| !t.kind.is_comment())
            .map(|t| t.text(text))
            .collect::<Vec<_>>()
            .join(" "),
        Err(_) => text.split_whitespace().collect::<Vec<_>>().join(" "),
    }
}

pub fn exact_match(patch: &str, ground_truth: &str, strict: bool) -> bool {
    if strict {
        patch == ground_truth
    } else {
        normalize_tokens(patch) == normalize_tokens(ground_truth)
    }
}

pub struct ExactMatchValidator {
    pub strict: bool,
}

impl PatchValidator for ExactMatchValidator {
    fn validate(&self, bug: &BugContext, patch_text: &str) -> Result<ValidationReport, ValidationError> {
        let truth = bug
            .ground_truth_fix
            .as_deref()
            .ok_or_else(|| ValidationError::Config(format!("{}: exact-match mode needs ground_truth_fix", bug.bug_id)))?;
        let verdict = if exact_match(patch_text, truth, self.strict) {
            Verdict::ExactMatch
        } else {
            Verdict::TestsFailed {
                failing: Vec::new(),
                timed_out: false,
            }
        };
        Ok(ValidationReport {
            verdict,
            output: String::new(),
        })
    }
}
