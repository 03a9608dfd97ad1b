//! Function extraction from Java-like source files.
//!
//! Structure is recovered by brace matching over the comment/literal-aware
//! token stream from [`super::lexer`]. Type bodies are walked member by
//! member; method and constructor bodies are skipped as opaque blocks, so
//! lambdas and anonymous classes stay inside their enclosing method.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::lexer::{comment_body, join_tokens, lex, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LanguageTag {
    #[default]
    #[serde(rename = "java-like")]
    JavaLike,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    /// Project-relative path with `/` separators.
    pub path: String,
    pub content: String,
    pub language_tag: LanguageTag,
    /// Set when the on-disk bytes were not valid UTF-8 and were decoded lossily.
    pub lossy: bool,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            content: content.into(),
            language_tag: LanguageTag::JavaLike,
            lossy: false,
        }
    }

    pub fn from_bytes(path: impl Into<String>, bytes: &[u8]) -> Self {
        let (content, lossy) = match std::str::from_utf8(bytes) {
            Ok(s) => (s.to_string(), false),
            Err(_) => (String::from_utf8_lossy(bytes).into_owned(), true),
        };
        Self {
            path: path.into(),
            content,
            language_tag: LanguageTag::JavaLike,
            lossy,
        }
    }
}

/// Inclusive, 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn contains_line(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }
}

/// One extracted method or constructor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub file_path: String,
    /// Enclosing type chain plus method name, dot separated.
    pub qualified_name: String,
    /// Name and parameter list with normalized spacing, e.g. `add(int a, int b)`.
    pub signature_text: String,
    /// Doc or block comment attached to the declaration, delimiters stripped.
    pub block_comment: String,
    pub inline_comments: Vec<String>,
    /// The brace-delimited body with every comment removed.
    pub body_text: String,
    /// Verbatim text of the lines covered by `span`.
    pub raw_text: String,
    pub span: Span,
    pub declared_param_types: Vec<String>,
    pub used_type_names: BTreeSet<String>,
}

impl FunctionRecord {
    /// Simple method name.
    pub fn name(&self) -> &str {
        self.qualified_name
            .rsplit('.')
            .next()
            .unwrap_or(&self.qualified_name)
    }

    /// Innermost declaring type, if the function is declared inside one.
    pub fn declaring_type(&self) -> Option<&str> {
        let (chain, _) = self.qualified_name.rsplit_once('.')?;
        Some(chain.rsplit('.').next().unwrap_or(chain))
    }

    /// Block comment followed by inline comments, newline separated.
    pub fn all_comments(&self) -> String {
        let mut parts = Vec::with_capacity(1 + self.inline_comments.len());
        if !self.block_comment.is_empty() {
            parts.push(self.block_comment.as_str());
        }
        parts.extend(
            self.inline_comments
                .iter()
                .map(String::as_str)
                .filter(|c| !c.is_empty()),
        );
        parts.join("\n")
    }

    /// Simple names of every type mentioned by parameters and local declarations.
    pub fn referenced_type_names(&self) -> BTreeSet<String> {
        let mut names = self.used_type_names.clone();
        for ty in &self.declared_param_types {
            names.extend(type_simple_names(ty));
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("{path}:{line} unbalanced delimiters")]
    UnbalancedDelimiters { path: String, line: usize },
    #[error("{path}:{line} {reason}")]
    Lex {
        path: String,
        line: usize,
        reason: String,
    },
}

impl ExtractError {
    pub fn line(&self) -> usize {
        match self {
            ExtractError::UnbalancedDelimiters { line, .. } | ExtractError::Lex { line, .. } => *line,
        }
    }
}

const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally", "float",
    "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long", "native",
    "new", "package", "private", "protected", "public", "return", "short", "static", "strictfp",
    "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try", "void",
    "volatile", "while", "var", "true", "false", "null", "record", "yield",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

/// Identifier components of a rendered type, e.g. `Map<String, Foo[]>` -> {Map, String, Foo}.
pub fn type_simple_names(ty: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut BTreeSet<String>, qualified_prefix: bool| {
        if !word.is_empty() && !is_keyword(word) && !qualified_prefix {
            out.insert(std::mem::take(word));
        }
        word.clear();
    };
    let chars: Vec<char> = ty.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() || c == '_' || c == '$' {
            word.push(c);
        } else {
            // `java.util.List` contributes only `List`.
            let followed_by_dot = c == '.' && chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
            flush(&mut word, &mut out, followed_by_dot);
        }
    }
    flush(&mut word, &mut out, false);
    out
}

/// Byte range of lines `start..=end` (1-based), excluding the final line terminator.
pub fn line_span_bytes(content: &str, span: Span) -> Option<Range<usize>> {
    if span.start == 0 || span.start > span.end {
        return None;
    }
    let mut line_starts = vec![0usize];
    line_starts.extend(content.match_indices('\n').map(|(i, _)| i + 1));
    let begin = *line_starts.get(span.start - 1)?;
    let mut end = match line_starts.get(span.end) {
        Some(&next) => next - 1,
        None => {
            if span.end > line_starts.len() {
                return None;
            }
            content.len()
        }
    };
    if end > begin && content.as_bytes()[end - 1] == b'\r' && end < content.len() {
        end -= 1;
    }
    Some(begin..end)
}

struct Parser<'a> {
    path: &'a str,
    src: &'a str,
    all: Vec<Token>,
    /// Indices into `all` of non-comment tokens.
    code: Vec<usize>,
    records: Vec<(usize, FunctionRecord)>,
}

impl<'a> Parser<'a> {
    fn tok(&self, ci: usize) -> &Token {
        &self.all[self.code[ci]]
    }

    fn text(&self, ci: usize) -> &'a str {
        let t = self.all[self.code[ci]];
        &self.src[t.start..t.end]
    }

    fn is(&self, ci: usize, p: &str) -> bool {
        ci < self.code.len() && self.tok(ci).kind == TokenKind::Punct && self.text(ci) == p
    }

    fn is_ident(&self, ci: usize) -> bool {
        ci < self.code.len() && self.tok(ci).kind == TokenKind::Ident
    }

    fn unbalanced(&self, line: usize) -> ExtractError {
        ExtractError::UnbalancedDelimiters {
            path: self.path.to_string(),
            line,
        }
    }

    /// Index of the token closing the bracket opened at `open`, searching below `limit`.
    fn match_close(&self, open: usize, limit: usize) -> Result<usize, ExtractError> {
        let (o, c) = match self.text(open) {
            "{" => ("{", "}"),
            "(" => ("(", ")"),
            "[" => ("[", "]"),
            _ => unreachable!("match_close on non-bracket"),
        };
        let mut depth = 0usize;
        for ci in open..limit {
            if self.is(ci, o) {
                depth += 1;
            } else if self.is(ci, c) {
                depth -= 1;
                if depth == 0 {
                    return Ok(ci);
                }
            }
        }
        Err(self.unbalanced(self.tok(open).line))
    }

    /// Walk the members of a type body occupying code tokens `start..end`.
    fn parse_members(
        &mut self,
        start: usize,
        end: usize,
        chain: &mut Vec<String>,
        is_enum: bool,
    ) -> Result<(), ExtractError> {
        let mut i = start;
        if is_enum {
            // Enum constants (possibly with argument lists and class bodies) run to the first `;`.
            let mut ci = start;
            loop {
                if ci >= end {
                    return Ok(());
                }
                if self.is(ci, "(") || self.is(ci, "{") {
                    ci = self.match_close(ci, end)? + 1;
                    continue;
                }
                if self.is(ci, ";") {
                    i = ci + 1;
                    break;
                }
                ci += 1;
            }
        }

        while i < end {
            let header_start = i;
            let mut j = i;
            let mut paren = 0i64;
            let mut saw_assign = false;
            loop {
                if j >= end {
                    if paren != 0 {
                        return Err(self.unbalanced(self.tok(header_start).line));
                    }
                    return Ok(());
                }
                if self.is(j, "(") {
                    paren += 1;
                } else if self.is(j, ")") {
                    paren -= 1;
                    if paren < 0 {
                        return Err(self.unbalanced(self.tok(j).line));
                    }
                } else if self.is(j, "}") {
                    return Err(self.unbalanced(self.tok(j).line));
                } else if paren == 0 && self.is(j, "=") {
                    saw_assign = true;
                } else if paren == 0 && self.is(j, ";") {
                    i = j + 1;
                    break;
                } else if self.is(j, "{") {
                    let close = self.match_close(j, end)?;
                    if paren > 0 || saw_assign {
                        // Annotation array values, array initializers, anonymous classes
                        // and lambdas in field initializers.
                        j = close + 1;
                        continue;
                    }
                    self.member_with_body(header_start, j, close, chain)?;
                    i = close + 1;
                    break;
                }
                j += 1;
            }
        }
        Ok(())
    }

    /// Header code-token indices with annotations removed (keeps `@interface`).
    fn strip_annotations(&self, start: usize, end: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut ci = start;
        while ci < end {
            if self.is(ci, "@") && !(ci + 1 < end && self.text(ci + 1) == "interface") {
                ci += 1;
                if self.is_ident(ci) {
                    ci += 1;
                }
                while ci + 1 < end && self.is(ci, ".") && self.is_ident(ci + 1) {
                    ci += 2;
                }
                if ci < end && self.is(ci, "(") {
                    ci = match self.match_close(ci, end) {
                        Ok(close) => close + 1,
                        Err(_) => end,
                    };
                }
                continue;
            }
            out.push(ci);
            ci += 1;
        }
        out
    }

    fn member_with_body(
        &mut self,
        header_start: usize,
        open: usize,
        close: usize,
        chain: &mut Vec<String>,
    ) -> Result<(), ExtractError> {
        let header = self.strip_annotations(header_start, open);

        // Nested type declaration.
        for (pos, &ci) in header.iter().enumerate() {
            let t = self.text(ci);
            if matches!(t, "class" | "interface" | "enum" | "record")
                && self.tok(ci).kind == TokenKind::Ident
                && !(pos > 0 && self.is(header[pos - 1], "."))
            {
                if let Some(&name_ci) = header.get(pos + 1) {
                    if self.is_ident(name_ci) {
                        chain.push(self.text(name_ci).to_string());
                        let result = self.parse_members(open + 1, close, chain, t == "enum");
                        chain.pop();
                        return result;
                    }
                }
            }
        }

        if let Some(method) = self.method_shape(&header) {
            let record = self.build_record(header_start, &header, method, open, close, chain);
            self.records.push((self.tok(header_start).start, record));
        }
        Ok(())
    }

    /// Locate name and parameter list if the header is a method or constructor declaration.
    fn method_shape(&self, header: &[usize]) -> Option<MethodShape> {
        let mut generic = 0i64;
        let mut open_pos = None;
        for (pos, &ci) in header.iter().enumerate() {
            match self.text(ci) {
                "<" => generic += 1,
                ">" => generic -= 1,
                "(" if generic == 0 => {
                    open_pos = Some(pos);
                    break;
                }
                _ => {}
            }
        }
        let open_pos = open_pos?;
        if open_pos == 0 {
            return None;
        }
        let name_ci = header[open_pos - 1];
        if !self.is_ident(name_ci) || is_keyword(self.text(name_ci)) {
            return None;
        }
        let mut depth = 0i64;
        let mut close_pos = None;
        for (pos, &ci) in header.iter().enumerate().skip(open_pos) {
            if self.is(ci, "(") {
                depth += 1;
            } else if self.is(ci, ")") {
                depth -= 1;
                if depth == 0 {
                    close_pos = Some(pos);
                    break;
                }
            }
        }
        let close_pos = close_pos?;
        // Permitted tail: legacy array dims and a throws clause.
        let tail = &header[close_pos + 1..];
        let mut k = 0;
        while k + 1 < tail.len() && self.is(tail[k], "[") && self.is(tail[k + 1], "]") {
            k += 2;
        }
        if k < tail.len() {
            if self.text(tail[k]) != "throws" {
                return None;
            }
            let ok = tail[k + 1..].iter().all(|&ci| {
                self.is_ident(ci)
                    || matches!(self.text(ci), "," | "." | "<" | ">" | "?" | "[" | "]" | "&")
            });
            if !ok {
                return None;
            }
        }
        Some(MethodShape {
            name_pos: open_pos - 1,
            open_pos,
            close_pos,
        })
    }

    fn build_record(
        &self,
        header_start: usize,
        header: &[usize],
        shape: MethodShape,
        open: usize,
        close: usize,
        chain: &[String],
    ) -> FunctionRecord {
        let name = self.text(header[shape.name_pos]);
        let sig_tokens: Vec<&str> = header[shape.name_pos..=shape.close_pos]
            .iter()
            .map(|&ci| self.text(ci))
            .collect();
        let signature_text = join_tokens(sig_tokens);

        let params = &header[shape.open_pos + 1..shape.close_pos];
        let declared_param_types = self.param_types(params);

        let first = *self.tok(header_start);
        let open_tok = *self.tok(open);
        let close_tok = *self.tok(close);
        let span = Span {
            start: first.line,
            end: close_tok.end_line,
        };
        let raw_range = line_span_bytes(self.src, span).expect("span within source");
        let raw_text = self.src[raw_range].to_string();

        let block_comment = self.attached_comment(header_start);

        let body_all = self.code[open]..=self.code[close];
        let body_comments: Vec<Token> = self.all[body_all]
            .iter()
            .filter(|t| t.kind.is_comment())
            .copied()
            .collect();
        let inline_comments = body_comments
            .iter()
            .map(|t| comment_body(t.text(self.src)))
            .collect();
        let body_text = strip_comments(self.src, open_tok.start..close_tok.end, &body_comments);

        let used_type_names = self.local_declaration_types(open + 1, close);

        let mut qualified: Vec<&str> = chain.iter().map(String::as_str).collect();
        qualified.push(name);
        let qualified_name = qualified.join(".");

        let mut hasher = Sha256::new();
        hasher.update(self.path.as_bytes());
        hasher.update([0]);
        hasher.update(format!("{}:{}:{}", span.start, span.end, first.start).as_bytes());
        let id = hex::encode(&hasher.finalize()[..8]);

        FunctionRecord {
            id,
            file_path: self.path.to_string(),
            qualified_name,
            signature_text,
            block_comment,
            inline_comments,
            body_text,
            raw_text,
            span,
            declared_param_types,
            used_type_names,
        }
    }

    fn param_types(&self, params: &[usize]) -> Vec<String> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new()];
        let mut depth = 0i64;
        for &ci in params {
            match self.text(ci) {
                "<" | "(" => depth += 1,
                ">" | ")" => depth -= 1,
                "," if depth == 0 => {
                    groups.push(Vec::new());
                    continue;
                }
                _ => {}
            }
            groups.last_mut().expect("nonempty").push(ci);
        }
        groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|g| {
                let g: Vec<usize> = g.into_iter().filter(|&ci| self.text(ci) != "final").collect();
                let name_pos = g.iter().rposition(|&ci| self.is_ident(ci));
                let texts: Vec<&str> = g
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| Some(*pos) != name_pos || g.len() == 1)
                    .map(|(_, &ci)| self.text(ci))
                    .collect();
                join_tokens(texts)
            })
            .collect()
    }

    /// Block comment immediately preceding the declaration, if the attachment rule holds.
    fn attached_comment(&self, header_start: usize) -> String {
        let all_idx = self.code[header_start];
        if all_idx == 0 {
            return String::new();
        }
        let prev = self.all[all_idx - 1];
        if prev.kind != TokenKind::BlockComment {
            return String::new();
        }
        // A comment trailing other code on its line belongs to that code.
        if all_idx >= 2 {
            let before = self.all[all_idx - 2];
            if !before.kind.is_comment() && before.end_line == prev.line {
                return String::new();
            }
        }
        let decl_line = self.all[all_idx].line;
        let blank_lines_between = decl_line.saturating_sub(prev.end_line + 1);
        if blank_lines_between > 1 {
            return String::new();
        }
        comment_body(prev.text(self.src))
    }

    /// Types named in local variable, catch, for-each and lambda parameter declarations.
    fn local_declaration_types(&self, start: usize, end: usize) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut p = start;
        while p < end {
            if !self.is_ident(p) || is_keyword(self.text(p)) || (p > start && self.is(p - 1, ".")) {
                p += 1;
                continue;
            }
            let type_start = p;
            let mut q = p;
            while q + 2 < end && self.is(q + 1, ".") && self.is_ident(q + 2) {
                q += 2;
            }
            if q + 1 < end && self.is(q + 1, "<") {
                match self.skip_type_args(q + 1, end) {
                    Some(gt) => q = gt,
                    None => {
                        p += 1;
                        continue;
                    }
                }
            }
            while q + 2 < end && self.is(q + 1, "[") && self.is(q + 2, "]") {
                q += 2;
            }
            let declares = q + 2 < end
                && self.is_ident(q + 1)
                && !is_keyword(self.text(q + 1))
                && matches!(self.text(q + 2), "=" | ";" | "," | ":" | ")");
            if declares {
                let ty: Vec<&str> = (type_start..=q).map(|ci| self.text(ci)).collect();
                out.extend(type_simple_names(&join_tokens(ty)));
                p = q + 1;
            } else {
                p += 1;
            }
        }
        out
    }

    /// Given `<` at `lt`, return the index of its matching `>` if the run is a plausible type argument list.
    fn skip_type_args(&self, lt: usize, end: usize) -> Option<usize> {
        let mut depth = 0i64;
        for ci in lt..end {
            let t = self.text(ci);
            match t {
                "<" => depth += 1,
                ">" => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(ci);
                    }
                }
                "," | "." | "?" | "[" | "]" | "&" | "extends" | "super" => {}
                _ if self.is_ident(ci) => {}
                _ => return None,
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct MethodShape {
    name_pos: usize,
    open_pos: usize,
    close_pos: usize,
}

/// Remove comment tokens from `src[range]`, dropping lines left blank and trailing whitespace.
fn strip_comments(src: &str, range: Range<usize>, comments: &[Token]) -> String {
    let mut out = String::with_capacity(range.len());
    let mut pos = range.start;
    for c in comments {
        out.push_str(&src[pos..c.start]);
        let next = src[c.end..range.end].chars().next();
        let prev_ws = out.chars().last().is_none_or(char::is_whitespace);
        let next_ws = next.is_none_or(char::is_whitespace);
        if c.kind == TokenKind::BlockComment && !prev_ws && !next_ws {
            out.push(' ');
        }
        pos = c.end;
    }
    out.push_str(&src[pos..range.end]);
    out.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extract every method and constructor declared in `file`, ordered by position.
pub fn extract_functions(file: &SourceFile) -> Result<Vec<FunctionRecord>, ExtractError> {
    let all = lex(&file.content).map_err(|e| ExtractError::Lex {
        path: file.path.clone(),
        line: e.line,
        reason: e.reason,
    })?;
    let code = all
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.kind.is_comment())
        .map(|(i, _)| i)
        .collect::<Vec<_>>();
    let mut parser = Parser {
        path: &file.path,
        src: &file.content,
        all,
        code,
        records: Vec::new(),
    };
    let n = parser.code.len();
    let mut chain = Vec::new();
    parser.parse_members(0, n, &mut chain, false)?;
    let mut records = parser.records;
    records.sort_by_key(|(offset, r)| (r.span.start, *offset));
    Ok(records.into_iter().map(|(_, r)| r).collect())
}
