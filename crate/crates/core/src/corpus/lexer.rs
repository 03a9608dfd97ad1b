//! Tokenizer for Java-like source.
//!
//! The lexer is comment- and literal-aware so that braces inside strings,
//! character literals, text blocks and comments never influence structure
//! detection. Operators are emitted one character per token except for the
//! handful of multi-character forms that matter when rendering signatures
//! (`...`, `->`, `::`).

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Char,
    TextBlock,
    LineComment,
    BlockComment,
    Punct,
}

impl TokenKind {
    pub fn is_comment(self) -> bool {
        matches!(self, TokenKind::LineComment | TokenKind::BlockComment)
    }
}

/// A token as a byte range into the source it was lexed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
    /// 1-based line of the first byte.
    pub line: usize,
    /// 1-based line of the last byte.
    pub end_line: usize,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }

    pub fn is_punct(&self, src: &str, p: &str) -> bool {
        self.kind == TokenKind::Punct && self.text(src) == p
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for LexError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for LexError {}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn bump_n(&mut self, n: usize) {
        for _ in 0..n {
            self.bump();
        }
    }
}

/// Tokenize `src`, keeping comments as tokens.
pub fn lex(src: &str) -> Result<Vec<Token>, LexError> {
    let mut cur = Cursor { src, pos: 0, line: 1 };
    let mut tokens = Vec::new();

    while let Some(c) = cur.peek() {
        if c.is_whitespace() || c == '\u{feff}' {
            cur.bump();
            continue;
        }
        let start = cur.pos;
        let line = cur.line;
        let kind = if cur.starts_with("//") {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
            TokenKind::LineComment
        } else if cur.starts_with("/*") {
            cur.bump_n(2);
            loop {
                if cur.starts_with("*/") {
                    cur.bump_n(2);
                    break;
                }
                if cur.bump().is_none() {
                    return Err(LexError {
                        line,
                        reason: "unterminated block comment".into(),
                    });
                }
            }
            TokenKind::BlockComment
        } else if cur.starts_with("\"\"\"") {
            cur.bump_n(3);
            loop {
                if cur.starts_with("\\") {
                    cur.bump_n(2);
                    continue;
                }
                if cur.starts_with("\"\"\"") {
                    cur.bump_n(3);
                    break;
                }
                if cur.bump().is_none() {
                    return Err(LexError {
                        line,
                        reason: "unterminated text block".into(),
                    });
                }
            }
            TokenKind::TextBlock
        } else if c == '"' || c == '\'' {
            let quote = c;
            cur.bump();
            loop {
                match cur.bump() {
                    Some('\\') => {
                        if matches!(cur.peek(), None | Some('\n')) {
                            return Err(LexError {
                                line,
                                reason: "unterminated literal".into(),
                            });
                        }
                        cur.bump();
                    }
                    Some(ch) if ch == quote => break,
                    Some('\n') | None => {
                        return Err(LexError {
                            line,
                            reason: "unterminated literal".into(),
                        })
                    }
                    Some(_) => {}
                }
            }
            if quote == '"' {
                TokenKind::Str
            } else {
                TokenKind::Char
            }
        } else if is_ident_start(c) {
            while cur.peek().is_some_and(is_ident_continue) {
                cur.bump();
            }
            TokenKind::Ident
        } else if c.is_ascii_digit() || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            let mut prev = '\0';
            while let Some(ch) = cur.peek() {
                let lit = &src[start..cur.pos];
                let is_hex = lit.starts_with("0x") || lit.starts_with("0X");
                let exponent_sign = (ch == '+' || ch == '-')
                    && if is_hex {
                        matches!(prev, 'p' | 'P')
                    } else {
                        matches!(prev, 'e' | 'E')
                    };
                if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' || exponent_sign {
                    prev = ch;
                    cur.bump();
                } else {
                    break;
                }
            }
            TokenKind::Number
        } else {
            if cur.starts_with("...") {
                cur.bump_n(3);
            } else if cur.starts_with("->") || cur.starts_with("::") {
                cur.bump_n(2);
            } else {
                cur.bump();
            }
            TokenKind::Punct
        };
        let end = cur.pos;
        let end_line = line + src[start..end].matches('\n').count()
            - usize::from(src[start..end].ends_with('\n'));
        tokens.push(Token {
            kind,
            start,
            end,
            line,
            end_line,
        });
    }
    Ok(tokens)
}

/// Text of a comment token with its delimiters and leading `*` gutters removed.
pub fn comment_body(raw: &str) -> String {
    if let Some(rest) = raw.strip_prefix("//") {
        return rest.trim().to_string();
    }
    let inner = raw.strip_prefix("/*").unwrap_or(raw);
    let inner = inner.strip_suffix("*/").unwrap_or(inner);
    let inner = inner.trim_start_matches('*');
    let lines: Vec<String> = inner
        .lines()
        .map(|l| {
            let t = l.trim_start();
            let t = t.strip_prefix('*').map(|r| r.strip_prefix(' ').unwrap_or(r)).unwrap_or(t);
            t.trim_end().to_string()
        })
        .collect();
    let first = lines.iter().position(|l| !l.is_empty());
    let last = lines.iter().rposition(|l| !l.is_empty());
    match (first, last) {
        (Some(a), Some(b)) => lines[a..=b].join("\n"),
        _ => String::new(),
    }
}

/// Join token texts with the spacing conventions used for signatures and
/// type names: `Map<String, List<Integer>> m`, `int[] xs`, `String... args`.
pub fn join_tokens<'a, I>(texts: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for t in texts {
        if let Some(p) = prev {
            let tight_before = matches!(t, "(" | ")" | "," | "." | "[" | "]" | ">" | "<" | "..." | ";");
            let tight_after = matches!(p, "(" | "." | "[" | "<" | "@");
            if !(tight_before || tight_after) {
                out.push(' ');
            }
        }
        out.push_str(t);
        prev = Some(t);
    }
    out
}
