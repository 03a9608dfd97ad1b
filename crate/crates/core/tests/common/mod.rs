//! Helpers shared by the integration tests and the acceptance suite:
//! fixture access, a seeded synthetic corpus generator, brute-force
//! retrieval oracles and test doubles.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Deserialize;

use ragrepair::corpus::{extract_functions, CorpusIndex, FunctionRecord, SourceFile};
use ragrepair::embedding::{cosine_similarity, LocalReferenceEmbedder};
use ragrepair::llm::{ChatRequest, LlmError, LlmProvider};
use ragrepair::sig_retrieval::{BugContext, FaultLocalization};
use ragrepair::snip_retrieval::SimilarityWeights;
use ragrepair::validation::{PatchValidator, ValidationError, ValidationReport, Verdict};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let to = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &to);
        } else {
            fs::copy(entry.path(), &to).unwrap();
        }
    }
}

/// A private, writable copy of a fixture directory.
pub fn fixture_copy(name: &str) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dst = tmp.path().join(name);
    copy_dir(&fixture(name), &dst);
    (tmp, dst)
}

pub fn embedder() -> LocalReferenceEmbedder {
    LocalReferenceEmbedder::new("hash-256", 256)
}

/// Index built straight from in-memory sources, records in (path, span) order.
pub fn index_of(files: &[(String, String)]) -> CorpusIndex {
    let mut records = Vec::new();
    for (path, src) in files {
        records.extend(extract_functions(&SourceFile::new(path.as_str(), src.as_str())).unwrap());
    }
    records.sort_by(|a, b| (&a.file_path, a.span).cmp(&(&b.file_path, b.span)));
    CorpusIndex::from_records(records, "synthetic".into(), "1970-01-01T00:00:00Z".into())
}

pub fn bug_for(record: &FunctionRecord, fault_line: usize) -> BugContext {
    BugContext {
        bug_id: format!("bug-{}", record.name()),
        project_root: PathBuf::from("."),
        buggy_function: record.clone(),
        failing_tests: Vec::new(),
        error_messages: vec!["AssertionError: expected true".into()],
        fault_localization: FaultLocalization {
            file_path: record.file_path.clone(),
            lines: vec![fault_line],
        },
        ground_truth_fix: None,
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpora

#[derive(Debug, Clone, Copy)]
pub struct SynthShape {
    pub dirs: usize,
    pub files_per_dir: (usize, usize),
    pub methods_per_file: (usize, usize),
    pub max_functions: usize,
}

impl Default for SynthShape {
    fn default() -> Self {
        Self {
            dirs: 2,
            files_per_dir: (2, 8),
            methods_per_file: (2, 14),
            max_functions: 200,
        }
    }
}

const VERBS: &[&str] = &[
    "parse", "read", "write", "find", "merge", "split", "check", "build", "reset", "flush", "scan", "emit", "load",
    "store", "match", "count",
];
const NOUNS: &[&str] = &[
    "Token", "Name", "Buffer", "Node", "Scope", "Table", "Entry", "Range", "Value", "Field", "Index", "Symbol",
    "Header", "Chunk",
];
const CLASSES: &[&str] = &[
    "Parser", "Lexer", "Reader", "Writer", "Cache", "Registry", "Resolver", "Printer", "Encoder", "Decoder",
    "Walker", "Builder", "Checker", "Loader",
];
const WORDS: &[&str] = &[
    "returns", "the", "current", "token", "value", "when", "buffer", "is", "empty", "otherwise", "updates", "scope",
    "table", "entry", "for", "given", "name", "index", "range", "checks", "whether", "symbol", "exists", "reads",
    "header", "chunk", "from", "input",
];

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Random java-like sources: one class per file, optional nested class,
/// overloads, block and inline comments, local declarations of other
/// generated classes, and occasional duplicated bodies so score ties occur.
pub fn synth_sources(seed: u64, shape: SynthShape) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files = Vec::new();
    let mut class_names = Vec::new();
    let mut budget = shape.max_functions;
    for d in 0..shape.dirs {
        let n_files = rng.gen_range(shape.files_per_dir.0..=shape.files_per_dir.1);
        for f in 0..n_files {
            let class = format!("{}{}{}", CLASSES[(d * 7 + f) % CLASSES.len()], d, f);
            class_names.push((format!("src/p{d}/{class}.java"), class));
        }
    }
    let all_classes: Vec<String> = class_names.iter().map(|(_, c)| c.clone()).collect();
    let mut shared_body: Option<String> = None;
    for (path, class) in &class_names {
        let mut src = format!("package p;\n\n/** {} */\npublic class {class} {{\n", words(&mut rng, 4));
        let n_methods = rng.gen_range(shape.methods_per_file.0..=shape.methods_per_file.1).min(budget);
        let mut nested_open = false;
        for m in 0..n_methods {
            if !nested_open && m > 2 && rng.gen_bool(0.1) {
                src.push_str(&format!("\n    static class Inner{m} {{\n"));
                nested_open = true;
            }
            let indent = if nested_open { "        " } else { "    " };
            let name = format!("{}{}", VERBS.choose(&mut rng).unwrap(), NOUNS.choose(&mut rng).unwrap());
            if rng.gen_bool(0.7) {
                let n = rng.gen_range(2..8);
                src.push_str(&format!("\n{indent}/** {} */\n", words(&mut rng, n)));
            } else {
                src.push('\n');
            }
            let other = all_classes.choose(&mut rng).unwrap();
            let params = match rng.gen_range(0..4) {
                0 => String::new(),
                1 => "int a".to_string(),
                2 => format!("{other} x, int n"),
                _ => "String s, java.util.List<Integer> xs".to_string(),
            };
            let body = if shared_body.is_some() && rng.gen_bool(0.15) {
                shared_body.clone().unwrap()
            } else {
                let mut b = String::new();
                let local = all_classes.choose(&mut rng).unwrap();
                if rng.gen_bool(0.5) {
                    b.push_str(&format!("{indent}    {local} helper = null;\n"));
                }
                for _ in 0..rng.gen_range(1..4) {
                    let v = NOUNS.choose(&mut rng).unwrap().to_lowercase();
                    let w = VERBS.choose(&mut rng).unwrap();
                    if rng.gen_bool(0.3) {
                        b.push_str(&format!("{indent}    int {v} = {w}(\"{{\"); // {}\n", words(&mut rng, 3)));
                    } else {
                        b.push_str(&format!("{indent}    int {v} = {w}({});\n", rng.gen_range(0..100)));
                    }
                }
                b.push_str(&format!("{indent}    return;\n"));
                if shared_body.is_none() {
                    shared_body = Some(b.clone());
                }
                b
            };
            src.push_str(&format!("{indent}void {name}({params}) {{\n{body}{indent}}}\n"));
        }
        if nested_open {
            src.push_str("    }\n");
        }
        src.push_str("}\n");
        budget -= n_methods;
        files.push((path.clone(), src));
    }
    files.sort();
    files
}

pub struct SynthCorpus {
    pub files: Vec<(String, String)>,
    pub index: CorpusIndex,
}

pub fn synth_corpus(seed: u64, shape: SynthShape) -> SynthCorpus {
    let files = synth_sources(seed, shape);
    let index = index_of(&files);
    SynthCorpus { files, index }
}

/// A bug on a random record that has at least one other function in its file.
pub fn pick_bug(index: &CorpusIndex, seed: u64) -> BugContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eligible: Vec<&FunctionRecord> = index
        .records
        .iter()
        .filter(|r| index.file_records(&r.file_path).count() > 1)
        .collect();
    let r = *eligible.choose(&mut rng).expect("corpus has a multi-function file");
    let line = rng.gen_range(r.span.start..=r.span.end);
    bug_for(r, line)
}

// ---------------------------------------------------------------------------
// Brute-force retrieval oracles

fn oracle_order(a: &(&FunctionRecord, f64), b: &(&FunctionRecord, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.file_path.cmp(&b.0.file_path))
        .then(a.0.span.start.cmp(&b.0.span.start))
        .then(a.0.qualified_name.cmp(&b.0.qualified_name))
        .then(a.0.id.cmp(&b.0.id))
}

fn simple_type_names(ty: &str) -> BTreeSet<String> {
    let re = Regex::new(r"[A-Za-z_][A-Za-z0-9_]*(?:\s*\.\s*[A-Za-z_][A-Za-z0-9_]*)*").unwrap();
    re.find_iter(ty)
        .map(|m| m.as_str().rsplit('.').next().unwrap().trim().to_string())
        .collect()
}

/// File mates plus every function whose innermost enclosing type is named
/// by the buggy function, recomputed from record fields.
pub fn oracle_sig_pool<'a>(bug: &BugContext, index: &'a CorpusIndex) -> Vec<&'a FunctionRecord> {
    let f = &bug.buggy_function;
    let mut types: BTreeSet<String> = f.used_type_names.clone();
    for p in &f.declared_param_types {
        types.extend(simple_type_names(p));
    }
    index
        .records
        .iter()
        .filter(|r| r.id != f.id)
        .filter(|r| {
            let segments: Vec<&str> = r.qualified_name.split('.').collect();
            let owner = (segments.len() >= 2).then(|| segments[segments.len() - 2]);
            r.file_path == f.file_path || owner.is_some_and(|o| types.contains(o))
        })
        .collect()
}

pub fn oracle_sig_ranking(query_text: &str, pool: &[&FunctionRecord], k: usize) -> Vec<String> {
    let e = embedder();
    let q = e.embed_text(query_text);
    let mut scored: Vec<(&FunctionRecord, f64)> = pool
        .iter()
        .map(|r| {
            let text = if r.block_comment.is_empty() {
                r.signature_text.clone()
            } else {
                format!("{} {}", r.signature_text, r.block_comment)
            };
            (*r, cosine_similarity(&q, &e.embed_text(text.trim_end())).unwrap())
        })
        .collect();
    scored.sort_by(oracle_order);
    scored.into_iter().take(k).map(|(r, _)| r.id.clone()).collect()
}

fn dir_of(path: &str) -> &str {
    path.rsplit_once('/').map(|(d, _)| d).unwrap_or("")
}

/// Intra pool, chosen sibling files, inter pool.
pub fn oracle_snip_pools<'a>(
    bug: &BugContext,
    index: &'a CorpusIndex,
    top_files: usize,
) -> (Vec<&'a FunctionRecord>, Vec<String>, Vec<&'a FunctionRecord>) {
    let f = &bug.buggy_function;
    let e = embedder();
    let intra: Vec<&FunctionRecord> = index
        .records
        .iter()
        .filter(|r| r.file_path == f.file_path && r.id != f.id)
        .collect();
    let profile = |path: &str| {
        index
            .records
            .iter()
            .filter(|r| r.file_path == path)
            .map(|r| r.signature_text.clone())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let own = e.embed_text(&profile(&f.file_path));
    let mut files: Vec<(String, f64)> = index
        .records
        .iter()
        .map(|r| r.file_path.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|p| *p != f.file_path && dir_of(p) == dir_of(&f.file_path))
        .map(|p| {
            let s = cosine_similarity(&own, &e.embed_text(&profile(&p))).unwrap();
            (p, s)
        })
        .collect();
    files.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    files.truncate(top_files);
    let chosen: Vec<String> = files.into_iter().map(|(p, _)| p).collect();
    let inter = chosen
        .iter()
        .flat_map(|p| index.records.iter().filter(move |r| &r.file_path == p))
        .collect();
    (intra, chosen, inter)
}

/// (s_code, s_comment) for each candidate, each text embedded on its own.
pub fn oracle_channel_pairs(bug: &BugContext, cands: &[&FunctionRecord]) -> Vec<(f64, f64)> {
    let e = embedder();
    let f = &bug.buggy_function;
    let comments = |r: &FunctionRecord| {
        std::iter::once(r.block_comment.as_str())
            .chain(r.inline_comments.iter().map(String::as_str))
            .filter(|c| !c.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let q_code = e.embed_text(&f.body_text);
    let q_comment_text = comments(f);
    let q_comment = e.embed_text(&q_comment_text);
    cands
        .iter()
        .map(|r| {
            let code = cosine_similarity(&q_code, &e.embed_text(&r.body_text)).unwrap();
            let c = comments(r);
            let comment = if q_comment_text.trim().is_empty() || c.trim().is_empty() {
                0.0
            } else {
                cosine_similarity(&q_comment, &e.embed_text(&c)).unwrap()
            };
            (code, comment)
        })
        .collect()
}

pub fn oracle_snip_ranking(
    intra: &[&FunctionRecord],
    inter: &[&FunctionRecord],
    pairs: &[(f64, f64)],
    w: &SimilarityWeights,
    k_each: usize,
) -> Vec<String> {
    let score = |(c, m): (f64, f64)| w.alpha * c + w.beta * m;
    let mut out = Vec::new();
    for (pool, offset) in [(intra, 0), (inter, intra.len())] {
        let mut scored: Vec<(&FunctionRecord, f64)> =
            pool.iter().enumerate().map(|(i, r)| (*r, score(pairs[offset + i]))).collect();
        scored.sort_by(oracle_order);
        out.extend(scored.into_iter().take(k_each).map(|(r, _)| r.id.clone()));
    }
    out
}

// ---------------------------------------------------------------------------
// Parser labels and the span oracle

#[derive(Debug, Clone, Deserialize)]
pub struct MethodLabel {
    pub file: String,
    pub qualified_name: String,
    pub start: usize,
    pub end: usize,
    pub signature: String,
    pub comment: String,
}

#[derive(Debug, Deserialize)]
struct LabelFile {
    method: Vec<MethodLabel>,
}

pub fn parser_labels() -> Vec<MethodLabel> {
    let text = fs::read_to_string(fixture("parser/labels.toml")).unwrap();
    toml::from_str::<LabelFile>(&text).unwrap().method
}

/// Source with string, char, text-block and comment contents blanked out,
/// newlines kept so line numbers survive.
pub fn erase_literals_and_comments(src: &str) -> String {
    let b = src.as_bytes();
    let mut out = Vec::with_capacity(b.len());
    let mut i = 0;
    let blank = |c: u8| if c == b'\n' { b'\n' } else { b' ' };
    while i < b.len() {
        if b[i..].starts_with(b"//") {
            while i < b.len() && b[i] != b'\n' {
                out.push(b' ');
                i += 1;
            }
        } else if b[i..].starts_with(b"/*") {
            let end = src[i + 2..].find("*/").map(|p| i + 2 + p + 2).unwrap_or(b.len());
            out.extend(b[i..end].iter().map(|&c| blank(c)));
            i = end;
        } else if b[i..].starts_with(b"\"\"\"") {
            let end = src[i + 3..].find("\"\"\"").map(|p| i + 3 + p + 3).unwrap_or(b.len());
            out.extend(b[i..end].iter().map(|&c| blank(c)));
            i = end;
        } else if b[i] == b'"' || b[i] == b'\'' {
            let q = b[i];
            out.push(b' ');
            i += 1;
            while i < b.len() && b[i] != q {
                let step = if b[i] == b'\\' { 2 } else { 1 };
                for _ in 0..step.min(b.len() - i) {
                    out.push(blank(b[i]));
                    i += 1;
                }
            }
            if i < b.len() {
                out.push(b' ');
                i += 1;
            }
        } else {
            out.push(b[i]);
            i += 1;
        }
    }
    String::from_utf8(out).unwrap()
}

/// End line of the first brace block opened outside parentheses on or
/// after line `start` (braces in annotation arguments are skipped).
pub fn brace_block_end(erased: &str, start: usize) -> Option<usize> {
    let mut depth = 0i64;
    let mut parens = 0i64;
    let mut opened = false;
    for (n, line) in erased.lines().enumerate().skip(start - 1) {
        for c in line.chars() {
            match c {
                '(' if !opened => parens += 1,
                ')' if !opened => parens -= 1,
                '{' if opened || parens == 0 => {
                    depth += 1;
                    opened = true;
                }
                '}' if opened => depth -= 1,
                _ => {}
            }
            if opened && depth == 0 {
                return Some(n + 1);
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Test doubles

/// Passes any patch containing `PASS`.
pub struct MarkerValidator;

impl PatchValidator for MarkerValidator {
    fn validate(&self, _bug: &BugContext, patch_text: &str) -> Result<ValidationReport, ValidationError> {
        let verdict = if patch_text.contains("PASS") {
            Verdict::Plausible
        } else {
            Verdict::TestsFailed {
                failing: vec![],
                timed_out: false,
            }
        };
        Ok(ValidationReport {
            verdict,
            output: String::new(),
        })
    }
}

/// Wraps a provider and records the user prompt of every call.
pub struct RecordingLlm<'a> {
    pub inner: &'a dyn LlmProvider,
    pub prompts: Mutex<Vec<String>>,
}

impl<'a> RecordingLlm<'a> {
    pub fn new(inner: &'a dyn LlmProvider) -> Self {
        Self {
            inner,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl LlmProvider for RecordingLlm<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        self.prompts.lock().unwrap().push(request.full_text());
        self.inner.complete(request)
    }
}

// ---------------------------------------------------------------------------
// Exact-match table and splice round trips

/// (patch, ground truth, strict, expected match).
pub fn exact_match_cases() -> Vec<(&'static str, &'static str, bool, bool)> {
    const GT: &str = "int add(int a, int b) {\n    return a + b;\n}";
    vec![
        // whitespace
        (GT, GT, false, true),
        ("int add(int a, int b) { return a + b; }", GT, false, true),
        ("int add(int a,int b){return a+b;}", GT, false, true),
        ("\tint add(int a, int b) {\n\t\treturn a + b;\n\t}\n", GT, false, true),
        ("int add(int a, int b) {\r\n    return a + b;\r\n}", GT, false, true),
        ("  int   add ( int a , int b )\n{\n return   a  +  b ;\n}", GT, false, true),
        ("\n\nint add(int a, int b) {\n    return a + b;\n}\n\n", GT, false, true),
        ("int add(int a, int b) { return a + b; }", GT, true, false),
        (GT, GT, true, true),
        ("int add(int a, int b) {\n    return a + b;\n}\n", GT, true, false),
        // comments
        ("int add(int a, int b) {\n    // sum\n    return a + b;\n}", GT, false, true),
        ("/** Adds. */\nint add(int a, int b) {\n    return a + b;\n}", GT, false, true),
        ("int add(int a, int b) { return a /* plus */ + b; }", GT, false, true),
        ("int add(int a, int b) {\n    return a + b; // fixed\n}", GT, false, true),
        ("int add(int a, int b) {\n    return a + b; // fixed\n}", GT, true, false),
        ("int add(int a, int b) { String s = \"// not a comment\"; return a + b; }", GT, false, false),
        ("int add(int a, int b) {\n    // return a - b;\n    return a + b;\n}", GT, false, true),
        ("int add(int a, int b) {\n    /* return a + b; */\n    return a - b;\n}", GT, false, false),
        // identifiers and tokens
        ("int add(int x, int b) {\n    return x + b;\n}", GT, false, false),
        ("int plus(int a, int b) {\n    return a + b;\n}", GT, false, false),
        ("int add(int a, int b) {\n    return b + a;\n}", GT, false, false),
        ("int add(int a, int b) {\n    return a - b;\n}", GT, false, false),
        ("long add(int a, int b) {\n    return a + b;\n}", GT, false, false),
        ("int add(int a, int b) {\n    return (a + b);\n}", GT, false, false),
        ("int add(int a, int b) {\n    return a + b\n}", GT, false, false),
        ("int Add(int a, int b) {\n    return a + b;\n}", GT, false, false),
        ("int add(int a, int b) {\n    return a ++ b;\n}", GT, false, false),
        ("int add(int a, int b) {\n    return a+ +b;\n}", GT, false, false),
        ("int add(final int a, int b) {\n    return a + b;\n}", GT, false, false),
        ("", GT, false, false),
    ]
}

/// Splice a rewritten body into every function of `project` and revert it,
/// checking the tree fingerprint each time. Returns the number of round trips.
pub fn splice_round_trips(project: &Path) -> Result<usize, String> {
    use ragrepair::corpus::build_corpus_index;
    use ragrepair::validation::{splice, spliced_span, tree_fingerprint};

    let before = tree_fingerprint(project).map_err(|e| e.to_string())?;
    let index = build_corpus_index(project, &[], &[]).map_err(|e| e.to_string())?.index;
    let mut n = 0;
    for r in &index.records {
        let patch = format!("    // patched\n{}\n", r.raw_text.replace("return", "return /* p */"));
        splice(project, &r.file_path, r.span, &r.raw_text, &patch).map_err(|e| e.to_string())?;
        let changed = tree_fingerprint(project).map_err(|e| e.to_string())?;
        if changed == before {
            return Err(format!("{}: splice changed nothing", r.qualified_name));
        }
        let patched = patch.strip_suffix('\n').unwrap();
        splice(project, &r.file_path, spliced_span(r.span, &patch), patched, &r.raw_text).map_err(|e| e.to_string())?;
        if tree_fingerprint(project).map_err(|e| e.to_string())? != before {
            return Err(format!("{}: revert is not byte-identical", r.qualified_name));
        }
        n += 1;
    }
    Ok(n)
}
