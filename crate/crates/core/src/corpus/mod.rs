//! Source ingestion: lexing, function extraction and the persisted corpus index.

mod extract;
mod index;
pub mod lexer;

pub use extract::{
    extract_functions, is_keyword, line_span_bytes, type_simple_names, ExtractError,
    FunctionRecord, LanguageTag, SourceFile, Span,
};
pub use index::{
    build_corpus_index, collect_source_paths, fingerprint_files, load_index, save_index,
    CorpusError, CorpusIndex, Diagnostic, IndexBuild, DEFAULT_INCLUDE, SCHEMA_VERSION,
};
