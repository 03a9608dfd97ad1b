//! Snippet retrieval: intra-file and inter-file pools, dual-channel
//! (code + comment) similarity and iterative weight adjustment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusIndex, FunctionRecord};
use crate::embedding::{cosine_similarity, Embedder, EmbeddingError};
use crate::sig_retrieval::{rank_scored, BugContext, PoolKind, RankedCandidate};

/// Stop adjusting once an iteration shrinks |gap| by less than this.
pub const GAP_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SnipError {
    #[error("both snippet pools are empty")]
    EmptyPools,
    #[error("every score pair has equal code and comment similarity")]
    DegenerateScores,
    #[error("no score pairs to adjust weights on")]
    NoScores,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    /// Weight on the code channel.
    pub alpha: f64,
    /// Weight on the comment channel.
    pub beta: f64,
    pub target_similarity: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            target_similarity: 1.0,
            learning_rate: 0.05,
            max_iterations: 50,
        }
    }
}

impl SimilarityWeights {
    pub fn with_split(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SnipError> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.alpha) || !in_unit(self.beta) || (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(SnipError::InvalidWeights(format!(
                "alpha={} beta={} must lie in [0,1] and sum to 1",
                self.alpha, self.beta
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !self.target_similarity.is_finite() {
            return Err(SnipError::InvalidWeights("learning_rate and target_similarity must be finite, learning_rate > 0".into()));
        }
        Ok(())
    }

    pub fn combine(&self, s: ChannelScores) -> f64 {
        self.alpha * s.code + self.beta * s.comment
    }
}

/// Per-candidate channel similarities. `comment` is 0 when either side
/// has no comments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    pub code: f64,
    pub comment: f64,
    pub comment_present: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnipQuery {
    pub code_text: String,
    pub comment_text: String,
}

impl SnipQuery {
    pub fn from_function(f: &FunctionRecord) -> Self {
        Self {
            code_text: f.body_text.clone(),
            comment_text: f.all_comments(),
        }
    }

    pub fn has_comment(&self) -> bool {
        !self.comment_text.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnipPools<'a> {
    pub intra: Vec<&'a FunctionRecord>,
    pub inter: Vec<&'a FunctionRecord>,
    /// Sibling files chosen for the inter pool with their profile similarity, best first.
    pub inter_files: Vec<(String, f64)>,
}

fn parent_dir(path: &str) -> &str {
    path.rfind('/').map_or("", |i| &path[..i])
}

/// Newline-joined signatures of every function in a file.
pub fn file_signature_profile(index: &CorpusIndex, path: &str) -> String {
    index
        .file_records(path)
        .map(|r| r.signature_text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Same-directory files ranked by profile cosine to `path`, best first,
/// ties by path. `path` itself is excluded.
pub fn rank_sibling_files(
    index: &CorpusIndex,
    path: &str,
    embedder: &dyn Embedder,
) -> Result<Vec<(String, f64)>, EmbeddingError> {
    let dir = parent_dir(path);
    let siblings: Vec<&str> = index
        .files()
        .filter(|f| *f != path && parent_dir(f) == dir)
        .collect();
    if siblings.is_empty() {
        return Ok(Vec::new());
    }
    let mut profiles = vec![file_signature_profile(index, path)];
    profiles.extend(siblings.iter().map(|f| file_signature_profile(index, f)));
    let refs: Vec<&str> = profiles.iter().map(String::as_str).collect();
    let vectors = embedder.embed_batch(&refs)?;
    let mut ranked = siblings
        .iter()
        .zip(&vectors[1..])
        .map(|(f, v)| Ok((f.to_string(), cosine_similarity(&vectors[0], v)?)))
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

pub fn build_snip_pool<'a>(
    bug: &BugContext,
    index: &'a CorpusIndex,
    top_files: usize,
    embedder: &dyn Embedder,
) -> Result<SnipPools<'a>, EmbeddingError> {
    let f = &bug.buggy_function;
    let intra: Vec<&FunctionRecord> = index.file_records(&f.file_path).filter(|r| r.id != f.id).collect();
    let mut inter_files = rank_sibling_files(index, &f.file_path, embedder)?;
    inter_files.truncate(top_files);
    let inter = inter_files
        .iter()
        .flat_map(|(path, _)| index.file_records(path))
        .collect();
    Ok(SnipPools {
        intra,
        inter,
        inter_files,
    })
}

/// Channel scores of every candidate against the query, embedded in one batch.
pub fn channel_scores(
    q: &SnipQuery,
    cands: &[&FunctionRecord],
    embedder: &dyn Embedder,
) -> Result<Vec<ChannelScores>, EmbeddingError> {
    let comments: Vec<String> = cands.iter().map(|c| c.all_comments()).collect();
    let mut texts: Vec<&str> = vec![q.code_text.as_str(), q.comment_text.as_str()];
    for (c, cm) in cands.iter().zip(&comments) {
        texts.push(c.body_text.as_str());
        texts.push(cm.as_str());
    }
    let v = embedder.embed_batch(&texts)?;
    let query_has_comment = q.has_comment();
    cands
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let code = cosine_similarity(&v[0], &v[2 + 2 * i])?;
            let comment_present = query_has_comment && !comments[i].trim().is_empty();
            let comment = if comment_present {
                cosine_similarity(&v[1], &v[3 + 2 * i])?
            } else {
                0.0
            };
            Ok(ChannelScores {
                code,
                comment,
                comment_present,
            })
        })
        .collect()
}

/// `alpha * s_code + beta * s_comment` for one candidate.
pub fn weighted_similarity(
    q: &SnipQuery,
    cand: &FunctionRecord,
    w: &SimilarityWeights,
    embedder: &dyn Embedder,
) -> Result<f64, EmbeddingError> {
    let s = channel_scores(q, &[cand], embedder)?;
    Ok(w.combine(s[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStep {
    pub iter: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gap: f64,
}

impl WeightStep {
    pub fn log_line(&self) -> String {
        format!(
            "WEIGHTS iter={} alpha={} beta={} gap={}",
            self.iter, self.alpha, self.beta, self.gap
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightAdjustment {
    pub weights: SimilarityWeights,
    /// Starting point (iter 0) followed by every completed iteration.
    pub trajectory: Vec<WeightStep>,
}

/// Gradient-style adjustment of (alpha, beta) toward the target similarity
/// over the pool's mean channel scores, projected back onto alpha + beta = 1.
pub fn adjust_weights(pool_scores: &[(f64, f64)], w: &SimilarityWeights) -> Result<WeightAdjustment, SnipError> {
    w.validate()?;
    if pool_scores.is_empty() {
        return Err(SnipError::NoScores);
    }
    if pool_scores.iter().all(|(c, m)| c == m) {
        return Err(SnipError::DegenerateScores);
    }
    let n = pool_scores.len() as f64;
    let mean_code = pool_scores.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_comment = pool_scores.iter().map(|p| p.1).sum::<f64>() / n;
    let gap_at = |a: f64, b: f64| w.target_similarity - (a * mean_code + b * mean_comment);

    let (mut alpha, mut beta) = (w.alpha, w.beta);
    let mut gap = gap_at(alpha, beta);
    let mut trajectory = vec![WeightStep {
        iter: 0,
        alpha,
        beta,
        gap,
    }];
    for iter in 1..=w.max_iterations {
        let a = (alpha + w.learning_rate * gap * mean_code).clamp(0.0, 1.0);
        let b = (beta + w.learning_rate * gap * mean_comment).clamp(0.0, 1.0);
        let sum = a + b;
        if sum <= 0.0 {
            break;
        }
        alpha = a / sum;
        beta = b / sum;
        let next = gap_at(alpha, beta);
        trajectory.push(WeightStep {
            iter,
            alpha,
            beta,
            gap: next,
        });
        let improvement = gap.abs() - next.abs();
        gap = next;
        if improvement < GAP_EPSILON {
            break;
        }
    }
    Ok(WeightAdjustment {
        weights: SimilarityWeights { alpha, beta, ..*w },
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnipRetrieval {
    /// Intra candidates first, then inter; ranks 1..N across both.
    pub candidates: Vec<RankedCandidate>,
    /// Weights used for scoring.
    pub weights: SimilarityWeights,
    pub trajectory: Vec<WeightStep>,
    /// Set when adjustment was skipped because the scores carried no signal.
    pub degenerate_scores: bool,
    pub comment_channel_zeroed: bool,
    pub inter_files: Vec<(String, f64)>,
}

fn weighted<'a>(
    recs: &[&'a FunctionRecord],
    scores: &[ChannelScores],
    w: &SimilarityWeights,
) -> Vec<(&'a FunctionRecord, f64)> {
    recs.iter().zip(scores).map(|(r, s)| (*r, w.combine(*s))).collect()
}

pub fn retrieve_snippets(
    bug: &BugContext,
    index: &CorpusIndex,
    w: &SimilarityWeights,
    k_each: usize,
    top_files: usize,
    embedder: &dyn Embedder,
) -> Result<SnipRetrieval, SnipError> {
    let pools = build_snip_pool(bug, index, top_files, embedder)?;
    if pools.intra.is_empty() && pools.inter.is_empty() {
        return Err(SnipError::EmptyPools);
    }
    let query = SnipQuery::from_function(&bug.buggy_function);
    let union: Vec<&FunctionRecord> = pools.intra.iter().chain(&pools.inter).copied().collect();
    let scores = channel_scores(&query, &union, embedder)?;
    let pairs: Vec<(f64, f64)> = scores.iter().map(|s| (s.code, s.comment)).collect();

    let (weights, trajectory, degenerate_scores) = match adjust_weights(&pairs, w) {
        Ok(adj) => (adj.weights, adj.trajectory, false),
        Err(SnipError::DegenerateScores) => {
            log::warn!("{}: degenerate channel scores, keeping initial weights", bug.bug_id);
            (*w, Vec::new(), true)
        }
        Err(e) => return Err(e),
    };

    let (intra_scores, inter_scores) = scores.split_at(pools.intra.len());
    let mut candidates = rank_scored(weighted(&pools.intra, intra_scores, &weights), k_each, PoolKind::SnipIntra);
    candidates.extend(rank_scored(weighted(&pools.inter, inter_scores, &weights), k_each, PoolKind::SnipInter));
    for (i, c) in candidates.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(SnipRetrieval {
        candidates,
        weights,
        trajectory,
        degenerate_scores,
        comment_channel_zeroed: !query.has_comment(),
        inter_files: pools.inter_files,
    })
}
