use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use super::extract::{extract_functions, FunctionRecord, SourceFile};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_INCLUDE: &str = "**/*.java";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no functions extracted from corpus")]
    EmptyCorpus,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid glob pattern {pattern:?}: {reason}")]
    Glob { pattern: String, reason: String },
    #[error("index schema_version {found} does not match expected {expected}")]
    SchemaMismatch { found: u64, expected: u32 },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A non-fatal problem found while indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WARN {}:{} {}", self.path, self.line, self.reason)
    }
}

/// Immutable collection of extracted functions with lookup tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub records: Vec<FunctionRecord>,
    pub by_file: BTreeMap<String, Vec<String>>,
    pub by_type_name: BTreeMap<String, Vec<String>>,
    pub created_at: String,
    pub corpus_fingerprint: String,
    #[serde(skip)]
    positions: HashMap<String, usize>,
}

impl CorpusIndex {
    /// Assemble an index from records already sorted by (path, span).
    pub fn from_records(
        records: Vec<FunctionRecord>,
        corpus_fingerprint: String,
        created_at: String,
    ) -> Self {
        let mut by_file: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut by_type_name: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut positions = HashMap::with_capacity(records.len());
        for (pos, r) in records.iter().enumerate() {
            positions.insert(r.id.clone(), pos);
            by_file
                .entry(r.file_path.clone())
                .or_default()
                .push(r.id.clone());
            if let Some(ty) = r.declaring_type() {
                by_type_name
                    .entry(ty.to_string())
                    .or_default()
                    .push(r.id.clone());
            }
        }
        Self {
            records,
            by_file,
            by_type_name,
            created_at,
            corpus_fingerprint,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FunctionRecord> {
        self.positions.get(id).map(|&p| &self.records[p])
    }

    pub fn file_records<'a>(&'a self, path: &str) -> impl Iterator<Item = &'a FunctionRecord> + 'a {
        self.by_file
            .get(path)
            .into_iter()
            .flatten()
            .filter_map(move |id| self.get(id))
    }

    pub fn type_records<'a>(&'a self, type_name: &str) -> impl Iterator<Item = &'a FunctionRecord> + 'a {
        self.by_type_name
            .get(type_name)
            .into_iter()
            .flatten()
            .filter_map(move |id| self.get(id))
    }

    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.by_file.keys().map(String::as_str)
    }
}

/// Result of indexing a project tree.
#[derive(Debug, Clone)]
pub struct IndexBuild {
    pub index: CorpusIndex,
    pub diagnostics: Vec<Diagnostic>,
}

fn glob_set(patterns: &[String]) -> Result<GlobSet, CorpusError> {
    let mut builder = GlobSetBuilder::new();
    for p in patterns {
        let glob = Glob::new(p).map_err(|e| CorpusError::Glob {
            pattern: p.clone(),
            reason: e.to_string(),
        })?;
        builder.add(glob);
    }
    builder.build().map_err(|e| CorpusError::Glob {
        pattern: patterns.join(","),
        reason: e.to_string(),
    })
}

/// Project-relative paths of files selected by the include/exclude globs, sorted.
pub fn collect_source_paths(
    root: &Path,
    include_globs: &[String],
    exclude_globs: &[String],
) -> Result<Vec<String>, CorpusError> {
    let include = if include_globs.is_empty() {
        glob_set(&[DEFAULT_INCLUDE.to_string()])?
    } else {
        glob_set(include_globs)?
    };
    let exclude = glob_set(exclude_globs)?;
    let mut paths = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            source: e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("directory walk failed")),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if include.is_match(&rel) && !exclude.is_match(&rel) {
            paths.push(rel);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Hash over every (path, content) pair, in path order.
pub fn fingerprint_files<'a, I>(files: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a [u8])>,
{
    let mut hasher = Sha256::new();
    for (path, bytes) in files {
        hasher.update(path.as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hex::encode(hasher.finalize())
}

/// Parse all matching files under `root` and build the index.
pub fn build_corpus_index(
    root: &Path,
    include_globs: &[String],
    exclude_globs: &[String],
) -> Result<IndexBuild, CorpusError> {
    let paths = collect_source_paths(root, include_globs, exclude_globs)?;
    let mut files = Vec::with_capacity(paths.len());
    for rel in &paths {
        let full = root.join(rel);
        let bytes = fs::read(&full).map_err(io_err(&full))?;
        files.push((rel.clone(), bytes));
    }
    let fingerprint = fingerprint_files(files.iter().map(|(p, b)| (p.as_str(), b.as_slice())));

    let parsed: Vec<_> = files
        .par_iter()
        .map(|(rel, bytes)| {
            let file = SourceFile::from_bytes(rel.clone(), bytes);
            (file.lossy, extract_functions(&file))
        })
        .collect();

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for ((rel, _), (lossy, result)) in files.iter().zip(parsed) {
        if lossy {
            diagnostics.push(Diagnostic {
                path: rel.clone(),
                line: 1,
                reason: "invalid UTF-8 replaced lossily".into(),
            });
        }
        match result {
            Ok(mut recs) => records.append(&mut recs),
            Err(e) => {
                log::warn!("skipping {rel}: {e}");
                diagnostics.push(Diagnostic {
                    path: rel.clone(),
                    line: e.line(),
                    reason: match &e {
                        super::ExtractError::UnbalancedDelimiters { .. } => {
                            "unbalanced delimiters".to_string()
                        }
                        super::ExtractError::Lex { reason, .. } => reason.clone(),
                    },
                });
            }
        }
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    Ok(IndexBuild {
        index: CorpusIndex::from_records(records, fingerprint, created_at),
        diagnostics,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    schema_version: u32,
    corpus_fingerprint: String,
    created_at: String,
    record_count: usize,
}

/// Write the index as a header line followed by one JSON record per line.
pub fn save_index(index: &CorpusIndex, path: &Path) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = IndexHeader {
        schema_version: SCHEMA_VERSION,
        corpus_fingerprint: index.corpus_fingerprint.clone(),
        created_at: index.created_at.clone(),
        record_count: index.records.len(),
    };
    let write = |w: &mut BufWriter<fs::File>, line: String| -> Result<(), CorpusError> {
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))
    };
    write(&mut w, serde_json::to_string(&header).expect("header serializes"))?;
    for r in &index.records {
        write(&mut w, serde_json::to_string(r).expect("record serializes"))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_index(path: &Path) -> Result<CorpusIndex, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CorpusError::CorruptIndex("empty file".into()))?;
    let header_value: serde_json::Value = serde_json::from_str(header_line)
        .map_err(|e| CorpusError::CorruptIndex(format!("header: {e}")))?;
    let found = header_value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CorpusError::CorruptIndex("header lacks schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(CorpusError::SchemaMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let header: IndexHeader = serde_json::from_value(header_value)
        .map_err(|e| CorpusError::CorruptIndex(format!("header: {e}")))?;
    let mut records = Vec::with_capacity(header.record_count);
    for (n, line) in lines.enumerate() {
        let record: FunctionRecord = serde_json::from_str(line)
            .map_err(|e| CorpusError::CorruptIndex(format!("record {}: {e}", n + 1)))?;
        records.push(record);
    }
    if records.len() != header.record_count {
        return Err(CorpusError::CorruptIndex(format!(
            "expected {} records, found {}",
            header.record_count,
            records.len()
        )));
    }
    Ok(CorpusIndex::from_records(
        records,
        header.corpus_fingerprint,
        header.created_at,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_project(dir: &Path, files: &[(&str, &str)]) {
        for (rel, content) in files {
            let p = dir.join(rel);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(p, content).unwrap();
        }
    }

    const A: &str = "class A {\n void a1() {}\n void a2() {}\n void a3() {}\n}\n";
    const B: &str = "class B {\n int b1(int x) { return x; }\n int b2() { return 0; }\n int b3() { return 1; }\n}\n";
    const C: &str = "class C {\n C() {}\n void c1() {}\n void c2() {}\n void c3() {}\n}\n";

    #[test]
    fn three_files_ten_methods() {
        let dir = tempfile::tempdir().unwrap();
        write_project(dir.path(), &[("src/A.java", A), ("src/B.java", B), ("src/C.java", C), ("README.md", "x")]);
        let built = build_corpus_index(dir.path(), &[], &[]).unwrap();
        assert_eq!(built.index.len(), 10);
        assert_eq!(built.index.by_file.len(), 3);
        assert!(built.diagnostics.is_empty());
        assert_eq!(built.index.by_type_name["C"].len(), 4);

        let again = build_corpus_index(dir.path(), &[], &[]).unwrap();
        assert_eq!(built.index.corpus_fingerprint, again.index.corpus_fingerprint);
        assert_eq!(built.index.records, again.index.records);
    }

    #[test]
    fn unparseable_file_becomes_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        write_project(dir.path(), &[("A.java", A), ("B.java", B), ("Broken.java", "class X {\n void f() {\n")]);
        let built = build_corpus_index(dir.path(), &[], &[]).unwrap();
        assert_eq!(built.index.by_file.len(), 2);
        assert_eq!(built.diagnostics.len(), 1);
        assert_eq!(built.diagnostics[0].to_string(), "WARN Broken.java:1 unbalanced delimiters");
    }

    #[test]
    fn empty_corpus_and_globs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_corpus_index(dir.path(), &[], &[]),
            Err(CorpusError::EmptyCorpus)
        ));
        write_project(dir.path(), &[("main/A.java", A), ("test/B.java", B)]);
        let built = build_corpus_index(dir.path(), &[], &["test/**".to_string()]).unwrap();
        assert_eq!(built.index.files().collect::<Vec<_>>(), vec!["main/A.java"]);
    }

    #[test]
    fn persistence_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_project(dir.path(), &[("A.java", A), ("B.java", B), ("C.java", C)]);
        let index = build_corpus_index(dir.path(), &[], &[]).unwrap().index;
        let path = dir.path().join("out/index.jsonl");
        save_index(&index, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded, index);

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_index(&path), Err(CorpusError::CorruptIndex(_))));

        let lines: Vec<&str> = text.lines().collect();
        fs::write(&path, lines[..lines.len() - 1].join("\n")).unwrap();
        assert!(matches!(load_index(&path), Err(CorpusError::CorruptIndex(_))));

        let future = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        fs::write(&path, future).unwrap();
        assert!(matches!(
            load_index(&path),
            Err(CorpusError::SchemaMismatch { found: 2, expected: 1 })
        ));
    }
}
