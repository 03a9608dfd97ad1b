//! Staged repair: a plain attempt, then signature-augmented attempts, then
//! snippet-augmented attempts, validating every patch as soon as it exists.

mod patch;
mod runlog;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::CorpusIndex;
use crate::embedding::Embedder;
use crate::llm::{ChatRequest, LlmError, LlmProvider};
use crate::prompt::{render_bug_context, Template, BASE_TEMPLATE, SIG_QUERY_TEMPLATE, SIG_TEMPLATE, SNIP_TEMPLATE, SYSTEM_PROMPT};
use crate::sig_retrieval::{
    build_sig_pool, query_from_buggy_lines, retrieve_signatures, rewrite_sig_query, BugContext, RankedCandidate,
    SigError,
};
use crate::snip_retrieval::{retrieve_snippets, SimilarityWeights, SnipError};
use crate::validation::{PatchValidator, Verdict};

pub use patch::{extract_patch, ExtractPatchError};
pub use runlog::{Clock, ClockKind, LogicalClock, RunLog, WallClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Base,
    Sig,
    Snip,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Sig => "sig",
            Stage::Snip => "snip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub enable_base: bool,
    pub enable_sig: bool,
    pub enable_snip: bool,
    pub sig_k: usize,
    pub sig_iterations: usize,
    pub snip_k_each: usize,
    pub snip_samples: usize,
    pub snip_top_files: usize,
    pub rewriting_enabled: bool,
    pub weights: SimilarityWeights,
    pub deadline_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            enable_base: true,
            enable_sig: true,
            enable_snip: true,
            sig_k: 25,
            sig_iterations: 20,
            snip_k_each: 15,
            snip_samples: 10,
            snip_top_files: 5,
            rewriting_enabled: true,
            weights: SimilarityWeights::default(),
            deadline_ms: 5 * 3600 * 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum Provenance {
    Base,
    Sig {
        iteration: usize,
        signature_ids: Vec<String>,
    },
    Snip {
        snippet_id: String,
        snippet_rank: usize,
        sample: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePatch {
    pub id: String,
    pub patch_text: String,
    pub stage: Stage,
    pub provenance: Provenance,
    pub verdict: Verdict,
    pub raw_llm_response: String,
}

impl CandidatePatch {
    /// Record a verdict. Only an untested patch can receive one.
    pub fn set_verdict(&mut self, v: Verdict) -> bool {
        if self.verdict != Verdict::Untested || v == Verdict::Untested {
            return false;
        }
        self.verdict = v;
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Outcome {
    Fixed { patch_id: String },
    Exhausted,
    Timeout,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Fixed { .. } => "fixed",
            Outcome::Exhausted => "exhausted",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounters {
    pub base: usize,
    pub sig: usize,
    pub snip: usize,
}

impl StageCounters {
    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::Base => self.base,
            Stage::Sig => self.sig,
            Stage::Snip => self.snip,
        }
    }

    fn bump(&mut self, stage: Stage) {
        match stage {
            Stage::Base => self.base += 1,
            Stage::Sig => self.sig += 1,
            Stage::Snip => self.snip += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairRun {
    pub bug: BugContext,
    pub config: PipelineConfig,
    pub patches: Vec<CandidatePatch>,
    pub outcome: Outcome,
    pub fixing_stage: Option<Stage>,
    pub counters: StageCounters,
    pub llm_calls: usize,
    pub wall_clock_ms: u64,
}

/// Result of one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    Fixed(String),
    Exhausted,
    Timeout,
}

/// Providers and validator shared by the stages of one run.
pub struct Providers<'a> {
    pub llm: &'a dyn LlmProvider,
    pub embedder: &'a dyn Embedder,
    pub validator: &'a dyn PatchValidator,
}

/// Counts every provider call, including rewriting retries.
struct CountingLlm<'a> {
    inner: &'a dyn LlmProvider,
    calls: AtomicUsize,
}

impl LlmProvider for CountingLlm<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// Mutable state of one repair run.
pub struct RepairSession<'a> {
    bug: &'a BugContext,
    index: &'a CorpusIndex,
    llm: CountingLlm<'a>,
    embedder: &'a dyn Embedder,
    validator: &'a dyn PatchValidator,
    cfg: &'a PipelineConfig,
    log: &'a mut RunLog,
    patches: Vec<CandidatePatch>,
    counters: StageCounters,
    bug_context: String,
}

fn relevant_function_line(c: &RankedCandidate) -> String {
    let comment = c.record.block_comment.split_whitespace().collect::<Vec<_>>().join(" ");
    if comment.is_empty() {
        c.record.signature_text.clone()
    } else {
        format!("{} — {comment}", c.record.signature_text)
    }
}

fn ranking_payload(cands: &[RankedCandidate]) -> serde_json::Value {
    cands
        .iter()
        .map(|c| {
            json!({
                "rank": c.rank,
                "score": c.score,
                "pool": c.pool,
                "id": c.record.id,
                "qualified_name": c.record.qualified_name,
                "file": c.record.file_path,
                "line": c.record.span.start,
            })
        })
        .collect()
}

impl<'a> RepairSession<'a> {
    pub fn new(
        bug: &'a BugContext,
        index: &'a CorpusIndex,
        providers: Providers<'a>,
        cfg: &'a PipelineConfig,
        log: &'a mut RunLog,
    ) -> Self {
        Self {
            bug,
            index,
            llm: CountingLlm {
                inner: providers.llm,
                calls: AtomicUsize::new(0),
            },
            embedder: providers.embedder,
            validator: providers.validator,
            cfg,
            log,
            patches: Vec::new(),
            counters: StageCounters::default(),
            bug_context: render_bug_context(bug),
        }
    }

    pub fn counters(&self) -> StageCounters {
        self.counters
    }

    pub fn patches(&self) -> &[CandidatePatch] {
        &self.patches
    }

    pub fn llm_calls(&self) -> usize {
        self.llm.calls.load(Ordering::SeqCst)
    }

    fn past_deadline(&self) -> bool {
        self.log.clock().elapsed_ms() >= self.cfg.deadline_ms
    }

    /// One LLM call, logged. `None` when the provider failed.
    fn ask(&mut self, stage: Stage, template: &Template, prompt: String, n: usize) -> Option<Vec<String>> {
        let request = ChatRequest::new(SYSTEM_PROMPT, prompt, n);
        self.log.event(
            "llm_request",
            &json!({"stage": stage, "template": template.id, "n": n, "messages": request.messages.iter().map(|m| json!({"role": m.role, "content": m.content})).collect::<Vec<_>>()}),
        );
        match self.llm.complete(&request) {
            Ok(mut responses) => {
                responses.truncate(n);
                self.log.event("llm_response", &json!({"stage": stage, "responses": responses}));
                Some(responses)
            }
            Err(e) => {
                log::warn!("{}: {} generation failed: {e}", self.bug.bug_id, stage.as_str());
                self.log.event("llm_error", &json!({"stage": stage, "error": e.to_string()}));
                None
            }
        }
    }

    /// Extract, record and validate one patch. Returns its id when it passes.
    fn try_patch(&mut self, stage: Stage, provenance: Provenance, response: String) -> Option<String> {
        let text = match extract_patch(&response) {
            Ok(t) => t,
            Err(e) => {
                self.log.event("patch_extract_failed", &json!({"stage": stage, "reason": e.to_string()}));
                return None;
            }
        };
        self.counters.bump(stage);
        let id = match &provenance {
            Provenance::Base => "base-1".to_string(),
            Provenance::Sig { iteration, .. } => format!("sig-{iteration}"),
            Provenance::Snip { snippet_rank, sample, .. } => format!("snip-{snippet_rank}-{sample}"),
        };
        let mut patch = CandidatePatch {
            id: id.clone(),
            patch_text: text,
            stage,
            provenance,
            verdict: Verdict::Untested,
            raw_llm_response: response,
        };
        let output = match self.validator.validate(self.bug, &patch.patch_text) {
            Ok(report) => {
                patch.set_verdict(report.verdict);
                report.output
            }
            Err(e) => {
                log::warn!("{}: validation of {id} failed: {e}", self.bug.bug_id);
                format!("validation error: {e}")
            }
        };
        self.log.event(
            "patch",
            &json!({"id": patch.id, "stage": stage, "provenance": patch.provenance, "verdict": patch.verdict, "patch_text": patch.patch_text, "output": output}),
        );
        let passed = patch.verdict.is_pass();
        self.patches.push(patch);
        passed.then_some(id)
    }

    pub fn base_repair(&mut self) -> StageStatus {
        if self.past_deadline() {
            return StageStatus::Timeout;
        }
        let prompt = BASE_TEMPLATE.render(&[("bug_context", &self.bug_context)]);
        let Some(responses) = self.ask(Stage::Base, &BASE_TEMPLATE, prompt, 1) else {
            return StageStatus::Exhausted;
        };
        match responses.into_iter().next() {
            Some(r) => match self.try_patch(Stage::Base, Provenance::Base, r) {
                Some(id) => StageStatus::Fixed(id),
                None => StageStatus::Exhausted,
            },
            None => {
                self.log.event("patch_extract_failed", &json!({"stage": Stage::Base, "reason": "empty response"}));
                StageStatus::Exhausted
            }
        }
    }

    fn sig_query(&mut self, iteration: usize) -> Result<crate::sig_retrieval::SigQuery, SigError> {
        if !self.cfg.rewriting_enabled {
            let q = query_from_buggy_lines(self.bug);
            self.log.event("sig_query", &json!({"iteration": iteration, "source": "buggy-lines", "query": q}));
            return Ok(q);
        }
        let result = rewrite_sig_query(self.bug, &self.llm);
        if let Ok(out) = &result {
            for a in &out.attempts {
                self.log.event(
                    "llm_request",
                    &json!({"stage": Stage::Sig, "template": SIG_QUERY_TEMPLATE.id, "n": 1, "messages": [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": a.prompt}]}),
                );
                self.log.event("llm_response", &json!({"stage": Stage::Sig, "responses": [a.response]}));
            }
            let source = if out.parse_fallback { "fallback" } else { "rewritten" };
            self.log.event("sig_query", &json!({"iteration": iteration, "source": source, "query": out.query}));
        }
        result.map(|o| o.query)
    }

    pub fn sig_repair(&mut self) -> StageStatus {
        let pool = build_sig_pool(self.bug, self.index);
        self.log.event("sig_pool", &json!({"size": pool.len(), "ids": pool.iter().map(|r| &r.id).collect::<Vec<_>>()}));
        if pool.is_empty() {
            self.log.event("warning", &json!({"stage": Stage::Sig, "message": "empty signature pool, prompting with empty context"}));
        }
        for iteration in 1..=self.cfg.sig_iterations {
            if self.past_deadline() {
                return StageStatus::Timeout;
            }
            let query = match self.sig_query(iteration) {
                Ok(q) => q,
                Err(e) => {
                    self.log.event("iteration_skipped", &json!({"stage": Stage::Sig, "iteration": iteration, "reason": e.to_string()}));
                    continue;
                }
            };
            let ranked = match retrieve_signatures(&query, &pool, self.cfg.sig_k, self.embedder) {
                Ok(r) => r,
                Err(e) => {
                    self.log.event("iteration_skipped", &json!({"stage": Stage::Sig, "iteration": iteration, "reason": e.to_string()}));
                    continue;
                }
            };
            self.log.event("sig_ranking", &json!({"iteration": iteration, "candidates": ranking_payload(&ranked)}));
            if self.past_deadline() {
                return StageStatus::Timeout;
            }
            let functions = ranked.iter().map(relevant_function_line).collect::<Vec<_>>().join("\n");
            let prompt = SIG_TEMPLATE.render(&[("bug_context", &self.bug_context), ("relevant_functions", &functions)]);
            let Some(responses) = self.ask(Stage::Sig, &SIG_TEMPLATE, prompt, 1) else {
                self.log.event("iteration_skipped", &json!({"stage": Stage::Sig, "iteration": iteration, "reason": "provider failure"}));
                continue;
            };
            let Some(response) = responses.into_iter().next() else {
                self.log.event("patch_extract_failed", &json!({"stage": Stage::Sig, "reason": "empty response"}));
                continue;
            };
            let provenance = Provenance::Sig {
                iteration,
                signature_ids: ranked.iter().map(|c| c.record.id.clone()).collect(),
            };
            if let Some(id) = self.try_patch(Stage::Sig, provenance, response) {
                return StageStatus::Fixed(id);
            }
        }
        StageStatus::Exhausted
    }

    pub fn snip_repair(&mut self) -> StageStatus {
        if self.past_deadline() {
            return StageStatus::Timeout;
        }
        let retrieval = match retrieve_snippets(
            self.bug,
            self.index,
            &self.cfg.weights,
            self.cfg.snip_k_each,
            self.cfg.snip_top_files,
            self.embedder,
        ) {
            Ok(r) => r,
            Err(e @ SnipError::EmptyPools) => {
                self.log.event("warning", &json!({"stage": Stage::Snip, "message": e.to_string()}));
                return StageStatus::Exhausted;
            }
            Err(e) => {
                log::warn!("{}: snippet retrieval failed: {e}", self.bug.bug_id);
                self.log.event("stage_skipped", &json!({"stage": Stage::Snip, "reason": e.to_string()}));
                return StageStatus::Exhausted;
            }
        };
        for step in &retrieval.trajectory {
            self.log.raw(step.log_line());
        }
        self.log.event(
            "snip_weights",
            &json!({"alpha": retrieval.weights.alpha, "beta": retrieval.weights.beta, "degenerate_scores": retrieval.degenerate_scores, "comment_channel_zeroed": retrieval.comment_channel_zeroed, "inter_files": retrieval.inter_files}),
        );
        self.log.event("snip_ranking", &json!({"candidates": ranking_payload(&retrieval.candidates)}));

        let samples = self.cfg.snip_samples;
        for snippet in &retrieval.candidates {
            if self.past_deadline() {
                return StageStatus::Timeout;
            }
            let prompt = SNIP_TEMPLATE.render(&[("bug_context", &self.bug_context), ("snippet", &snippet.record.raw_text)]);
            let Some(responses) = self.ask(Stage::Snip, &SNIP_TEMPLATE, prompt, samples) else {
                self.log.event("snippet_skipped", &json!({"rank": snippet.rank, "id": snippet.record.id, "reason": "provider failure"}));
                continue;
            };
            for (i, response) in responses.into_iter().enumerate() {
                let provenance = Provenance::Snip {
                    snippet_id: snippet.record.id.clone(),
                    snippet_rank: snippet.rank,
                    sample: i + 1,
                };
                if let Some(id) = self.try_patch(Stage::Snip, provenance, response) {
                    return StageStatus::Fixed(id);
                }
            }
        }
        StageStatus::Exhausted
    }
}

/// Run the enabled stages in order until a patch passes, budgets run out or
/// the deadline passes.
pub fn run_repair(
    bug: &BugContext,
    index: &CorpusIndex,
    providers: Providers<'_>,
    cfg: &PipelineConfig,
    log: &mut RunLog,
) -> RepairRun {
    let started = Instant::now();
    log.event(
        "run_start",
        &json!({"bug_id": bug.bug_id, "buggy_function": bug.buggy_function.qualified_name, "file": bug.buggy_function.file_path, "config": cfg, "templates": [BASE_TEMPLATE.id, SIG_QUERY_TEMPLATE.id, SIG_TEMPLATE.id, SNIP_TEMPLATE.id]}),
    );
    let mut session = RepairSession::new(bug, index, providers, cfg, log);
    let stages = [
        (Stage::Base, cfg.enable_base),
        (Stage::Sig, cfg.enable_sig),
        (Stage::Snip, cfg.enable_snip),
    ];
    let mut outcome = Outcome::Exhausted;
    let mut fixing_stage = None;
    for (stage, enabled) in stages {
        if !enabled {
            continue;
        }
        session.log.event("stage_start", &json!({"stage": stage}));
        let status = match stage {
            Stage::Base => session.base_repair(),
            Stage::Sig => session.sig_repair(),
            Stage::Snip => session.snip_repair(),
        };
        let label = match &status {
            StageStatus::Fixed(_) => "fixed",
            StageStatus::Exhausted => "exhausted",
            StageStatus::Timeout => "timeout",
        };
        session.log.event(
            "stage_end",
            &json!({"stage": stage, "status": label, "patches": session.counters.get(stage)}),
        );
        match status {
            StageStatus::Fixed(patch_id) => {
                outcome = Outcome::Fixed { patch_id };
                fixing_stage = Some(stage);
                break;
            }
            StageStatus::Timeout => {
                outcome = Outcome::Timeout;
                break;
            }
            StageStatus::Exhausted => {}
        }
    }
    let llm_calls = session.llm_calls();
    let RepairSession { patches, counters, .. } = session;
    log.event(
        "run_end",
        &json!({"outcome": outcome, "fixing_stage": fixing_stage, "counters": counters, "llm_calls": llm_calls}),
    );
    RepairRun {
        bug: bug.clone(),
        config: cfg.clone(),
        patches,
        outcome,
        fixing_stage,
        counters,
        llm_calls,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    }
}
