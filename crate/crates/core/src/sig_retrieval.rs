//! Signature retrieval: the per-bug candidate pool, LLM query rewriting and
//! top-k ranking of function signatures.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::is_keyword;
use crate::corpus::lexer::{lex, TokenKind};
use crate::corpus::{CorpusIndex, FunctionRecord};
use crate::embedding::{cosine_similarity, Embedder, EmbeddingError};
use crate::llm::{ChatRequest, LlmError, LlmProvider};
use crate::prompt::{render_bug_context, SIG_QUERY_TEMPLATE, SYSTEM_PROMPT};

pub const MAX_CANDIDATE_NAMES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailingTest {
    pub name: String,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultLocalization {
    pub file_path: String,
    /// 1-based line numbers.
    pub lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugContext {
    pub bug_id: String,
    pub project_root: PathBuf,
    pub buggy_function: FunctionRecord,
    #[serde(default)]
    pub failing_tests: Vec<FailingTest>,
    #[serde(default)]
    pub error_messages: Vec<String>,
    pub fault_localization: FaultLocalization,
    #[serde(default)]
    pub ground_truth_fix: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BugContextError {
    #[error("file {0} is not in the corpus index")]
    FileNotIndexed(String),
    #[error("fault localization names {found} but the buggy function lives in {expected}")]
    FileMismatch { expected: String, found: String },
    #[error("fault line {line} lies outside the buggy function (lines {start}-{end})")]
    LineOutsideFunction { line: usize, start: usize, end: usize },
    #[error("no fault lines given")]
    NoFaultLines,
}

impl BugContext {
    pub fn validate(&self, index: &CorpusIndex) -> Result<(), BugContextError> {
        let f = &self.buggy_function;
        if !index.by_file.contains_key(&f.file_path) {
            return Err(BugContextError::FileNotIndexed(f.file_path.clone()));
        }
        if self.fault_localization.file_path != f.file_path {
            return Err(BugContextError::FileMismatch {
                expected: f.file_path.clone(),
                found: self.fault_localization.file_path.clone(),
            });
        }
        if self.fault_localization.lines.is_empty() {
            return Err(BugContextError::NoFaultLines);
        }
        if let Some(&line) = self
            .fault_localization
            .lines
            .iter()
            .find(|&&l| !f.span.contains_line(l))
        {
            return Err(BugContextError::LineOutsideFunction {
                line,
                start: f.span.start,
                end: f.span.end,
            });
        }
        Ok(())
    }

    /// Source text of the fault-localized lines, in the order given.
    pub fn buggy_lines(&self) -> Vec<&str> {
        let f = &self.buggy_function;
        let lines: Vec<&str> = f.raw_text.lines().collect();
        self.fault_localization
            .lines
            .iter()
            .filter_map(|&l| l.checked_sub(f.span.start).and_then(|i| lines.get(i).copied()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigQuery {
    pub root_causes: Vec<String>,
    pub candidate_names: Vec<String>,
    pub combined_text: String,
    pub raw_llm_response: String,
}

impl SigQuery {
    pub fn new(root_causes: Vec<String>, candidate_names: Vec<String>, raw_llm_response: String) -> Self {
        let combined_text = format!("{} {}", root_causes.join(" "), candidate_names.join(" "));
        Self {
            root_causes,
            candidate_names,
            combined_text,
            raw_llm_response,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolKind {
    #[serde(rename = "sig")]
    Sig,
    #[serde(rename = "snip-intra")]
    SnipIntra,
    #[serde(rename = "snip-inter")]
    SnipInter,
}

impl PoolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Sig => "sig",
            PoolKind::SnipIntra => "snip-intra",
            PoolKind::SnipInter => "snip-inter",
        }
    }
}

impl std::fmt::Display for PoolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub record: FunctionRecord,
    pub score: f64,
    pub pool: PoolKind,
    /// 1-based.
    pub rank: usize,
}

/// Ranking order: score descending, then file path, start line, qualified
/// name and id ascending.
pub fn candidate_order(a: (&FunctionRecord, f64), b: (&FunctionRecord, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.file_path.cmp(&b.0.file_path))
        .then_with(|| a.0.span.start.cmp(&b.0.span.start))
        .then_with(|| a.0.qualified_name.cmp(&b.0.qualified_name))
        .then_with(|| a.0.id.cmp(&b.0.id))
}

/// Sort scored records, keep the first `k`, number them from 1.
pub fn rank_scored(mut scored: Vec<(&FunctionRecord, f64)>, k: usize, pool: PoolKind) -> Vec<RankedCandidate> {
    scored.sort_by(|a, b| candidate_order(*a, *b));
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (record, score))| RankedCandidate {
            record: record.clone(),
            score,
            pool,
            rank: i + 1,
        })
        .collect()
}

/// Functions in the buggy file (minus the buggy function) plus every
/// function declared by a type the buggy function names, deduplicated by id
/// and in index order.
pub fn build_sig_pool<'a>(bug: &BugContext, index: &'a CorpusIndex) -> Vec<&'a FunctionRecord> {
    let f = &bug.buggy_function;
    let mut ids: BTreeSet<&str> = BTreeSet::new();
    for r in index.file_records(&f.file_path) {
        if r.id != f.id {
            ids.insert(&r.id);
        }
    }
    for ty in f.referenced_type_names() {
        for r in index.type_records(&ty) {
            if r.id != f.id {
                ids.insert(&r.id);
            }
        }
    }
    let pool: Vec<&FunctionRecord> = index.records.iter().filter(|r| ids.contains(r.id.as_str())).collect();
    if pool.is_empty() {
        log::warn!("{}: signature pool is empty", bug.bug_id);
    }
    pool
}

#[derive(Debug, Error)]
pub enum SigError {
    #[error(transparent)]
    LlmUnavailable(#[from] LlmError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewriteAttempt {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewriteOutcome {
    pub query: SigQuery,
    pub attempts: Vec<RewriteAttempt>,
    /// Both attempts were unparseable and the query came from the buggy lines.
    pub parse_fallback: bool,
}

pub fn sig_query_prompt(bug: &BugContext) -> String {
    SIG_QUERY_TEMPLATE.render(&[("bug_context", &render_bug_context(bug))])
}

/// Ask the LLM for two root causes and up to five function names. One retry
/// on an unparseable answer, then [`query_from_buggy_lines`].
pub fn rewrite_sig_query(bug: &BugContext, llm: &dyn LlmProvider) -> Result<RewriteOutcome, SigError> {
    let prompt = sig_query_prompt(bug);
    let mut attempts = Vec::new();
    for _ in 0..2 {
        let request = ChatRequest::new(SYSTEM_PROMPT, prompt.clone(), 1);
        let response = llm.complete(&request)?.into_iter().next().unwrap_or_default();
        attempts.push(RewriteAttempt {
            prompt: prompt.clone(),
            response: response.clone(),
        });
        if let Some((causes, names)) = parse_sig_response(&response) {
            return Ok(RewriteOutcome {
                query: SigQuery::new(causes, names, response),
                attempts,
                parse_fallback: false,
            });
        }
    }
    log::info!("{}: query rewriting unparseable twice, using buggy-line fallback", bug.bug_id);
    let mut query = query_from_buggy_lines(bug);
    query.raw_llm_response = attempts.last().map(|a| a.response.clone()).unwrap_or_default();
    Ok(RewriteOutcome {
        query,
        attempts,
        parse_fallback: true,
    })
}

/// Deterministic query built only from the fault-localized lines.
pub fn query_from_buggy_lines(bug: &BugContext) -> SigQuery {
    let lines = bug.buggy_lines();
    let joined = lines.iter().map(|l| l.trim()).collect::<Vec<_>>().join(" ");
    let error = bug
        .error_messages
        .first()
        .and_then(|m| m.lines().next())
        .map(str::trim)
        .unwrap_or("failing tests");
    let causes = vec![format!("buggy line: {joined}"), format!("error: {error}")];
    let mut names: Vec<String> = line_identifiers(&lines.join("\n"))
        .into_iter()
        .take(MAX_CANDIDATE_NAMES)
        .collect();
    if names.is_empty() {
        names.push(bug.buggy_function.name().to_string());
    }
    SigQuery::new(causes, names, String::new())
}

/// Distinct non-keyword identifiers in order of first appearance.
fn line_identifiers(text: &str) -> Vec<String> {
    let words: Vec<String> = match lex(text) {
        Ok(tokens) => tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Ident)
            .map(|t| t.text(text).to_string())
            .collect(),
        Err(_) => text
            .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '$'))
            .filter(|w| w.chars().next().is_some_and(|c| !c.is_ascii_digit()))
            .map(str::to_string)
            .collect(),
    };
    let mut seen = BTreeSet::new();
    words
        .into_iter()
        .filter(|w| !is_keyword(w) && seen.insert(w.clone()))
        .collect()
}

fn header_of(line: &str) -> Option<(&'static str, &str)> {
    let stripped = line.trim().trim_start_matches(['#', '*', ' ']);
    for header in ["ROOT CAUSES:", "CANDIDATE FUNCTIONS:"] {
        if stripped.len() >= header.len()
            && stripped.is_char_boundary(header.len())
            && stripped[..header.len()].eq_ignore_ascii_case(header)
        {
            let rest = stripped[header.len()..].trim_start_matches('*').trim();
            return Some((header, rest));
        }
    }
    None
}

fn strip_list_marker(item: &str) -> &str {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    MARKER
        .get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s*").expect("valid pattern"))
        .find(item)
        .map_or(item, |m| &item[m.end()..])
        .trim()
}

fn clean_name(raw: &str) -> Option<String> {
    let s = raw.trim().trim_matches(|c: char| "`'\"*".contains(c));
    let s = s.split('(').next().unwrap_or("");
    let s = s.split_whitespace().next().unwrap_or("");
    let s = s.rsplit(['.', '#']).next().unwrap_or("");
    let s = s.trim_matches(|c: char| "`'\"*:".contains(c));
    let mut chars = s.chars();
    let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    (head_ok && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')).then(|| s.to_string())
}

/// Parse the two-section rewriting answer. `None` when fewer than two root
/// causes or no usable function name was found.
pub fn parse_sig_response(response: &str) -> Option<(Vec<String>, Vec<String>)> {
    let mut causes = Vec::new();
    let mut name_items = Vec::new();
    let mut section: Option<&str> = None;
    for line in response.lines() {
        let item = if let Some((header, rest)) = header_of(line) {
            section = Some(header);
            rest
        } else {
            line
        };
        let item = strip_list_marker(item);
        if item.is_empty() || item.starts_with("```") {
            continue;
        }
        match section {
            Some("ROOT CAUSES:") => causes.push(item.trim_matches('*').trim().to_string()),
            Some(_) => name_items.push(item.to_string()),
            None => {}
        }
    }
    let causes: Vec<String> = causes.into_iter().filter(|c| !c.is_empty()).take(2).collect();
    let mut names: Vec<String> = Vec::new();
    for item in &name_items {
        for part in item.split(',') {
            if let Some(n) = clean_name(part) {
                if !names.contains(&n) {
                    names.push(n);
                }
            }
        }
    }
    names.truncate(MAX_CANDIDATE_NAMES);
    (causes.len() == 2 && !names.is_empty()).then_some((causes, names))
}

/// Text embedded for a signature candidate: signature, a space, block comment.
pub fn signature_embedding_text(r: &FunctionRecord) -> String {
    format!("{} {}", r.signature_text, r.block_comment).trim_end().to_string()
}

/// Exact cosine scan of `pool` against the query; top `k` by the standard order.
pub fn retrieve_signatures(
    query: &SigQuery,
    pool: &[&FunctionRecord],
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<RankedCandidate>, EmbeddingError> {
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = pool.iter().map(|r| signature_embedding_text(r)).collect();
    let mut inputs: Vec<&str> = vec![query.combined_text.as_str()];
    inputs.extend(texts.iter().map(String::as_str));
    let vectors = embedder.embed_batch(&inputs)?;
    let (q, cands) = vectors.split_first().expect("query vector present");
    let scored = pool
        .iter()
        .zip(cands)
        .map(|(r, v)| Ok((*r, cosine_similarity(q, v)?)))
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    Ok(rank_scored(scored, k, PoolKind::Sig))
}
