//! A small, total SQL lexer.
//!
//! It does not try to understand SQL. It only needs to know where string
//! literals, quoted identifiers and comments begin and end, so that keyword
//! counting and clause segmentation never look inside them, and how deeply
//! each token is nested in parentheses.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare word: a keyword or an unquoted identifier.
    Word,
    /// `"ident"`, `` `ident` `` or `[ident]`.
    QuotedIdent,
    /// `'text'`, including blob literals `x'00ff'`.
    StringLit,
    Number,
    /// `?`, `?NNN`, `:name`, `@name`, `$name`.
    Param,
    LParen,
    RParen,
    Comma,
    Semicolon,
    Dot,
    /// Any other operator or punctuation.
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte range in the source text.
    pub span: Range<usize>,
    /// Parenthesis nesting depth at the token. Parentheses themselves carry
    /// the depth of the context they open or close.
    pub depth: u32,
}

impl Token {
    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.span.clone()]
    }

    /// True for a bare word equal (ASCII case-insensitively) to `word`.
    pub fn is_word(&self, source: &str, word: &str) -> bool {
        self.kind == TokenKind::Word && self.text(source).eq_ignore_ascii_case(word)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexWarningKind {
    UnterminatedString,
    UnterminatedQuotedIdentifier,
    UnterminatedBlockComment,
    UnbalancedParenthesis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexWarning {
    pub kind: LexWarningKind,
    /// Byte offset where the offending construct starts.
    pub offset: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub warnings: Vec<LexWarning>,
}

fn is_word_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b >= 0x80
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$' || b >= 0x80
}

/// Splits `sql` into tokens. Never fails: unterminated constructs run to the
/// end of the input and are reported as warnings.
pub fn lex(sql: &str) -> Lexed {
    let bytes = sql.as_bytes();
    let len = bytes.len();
    let mut out = Lexed::default();
    let mut depth: u32 = 0;
    let mut i = 0;

    while i < len {
        let b = bytes[i];
        let start = i;

        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }

        // -- line comment
        if b == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < len && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }

        // /* block comment */
        if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            loop {
                if i + 1 >= len {
                    out.warnings.push(LexWarning {
                        kind: LexWarningKind::UnterminatedBlockComment,
                        offset: start,
                    });
                    i = len;
                    break;
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }

        // Blob literal x'..' is lexed as a string.
        if (b == b'x' || b == b'X') && bytes.get(i + 1) == Some(&b'\'') {
            i = scan_quoted(bytes, i + 1, b'\'', &mut out.warnings, LexWarningKind::UnterminatedString, start);
            push(&mut out, TokenKind::StringLit, start, i, depth);
            continue;
        }

        if is_word_start(b) {
            while i < len && is_word_byte(bytes[i]) {
                i += 1;
            }
            push(&mut out, TokenKind::Word, start, i, depth);
            continue;
        }

        if b.is_ascii_digit() || (b == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            i = scan_number(bytes, i);
            push(&mut out, TokenKind::Number, start, i, depth);
            continue;
        }

        match b {
            b'\'' => {
                i = scan_quoted(bytes, i, b'\'', &mut out.warnings, LexWarningKind::UnterminatedString, start);
                push(&mut out, TokenKind::StringLit, start, i, depth);
            }
            b'"' | b'`' => {
                i = scan_quoted(bytes, i, b, &mut out.warnings, LexWarningKind::UnterminatedQuotedIdentifier, start);
                push(&mut out, TokenKind::QuotedIdent, start, i, depth);
            }
            b'[' => {
                i += 1;
                while i < len && bytes[i] != b']' {
                    i += 1;
                }
                if i < len {
                    i += 1;
                } else {
                    out.warnings.push(LexWarning {
                        kind: LexWarningKind::UnterminatedQuotedIdentifier,
                        offset: start,
                    });
                }
                push(&mut out, TokenKind::QuotedIdent, start, i, depth);
            }
            b'?' => {
                i += 1;
                while i < len && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                push(&mut out, TokenKind::Param, start, i, depth);
            }
            b':' | b'@' | b'$' if bytes.get(i + 1).copied().is_some_and(is_word_start) => {
                i += 1;
                while i < len && is_word_byte(bytes[i]) {
                    i += 1;
                }
                push(&mut out, TokenKind::Param, start, i, depth);
            }
            b'(' => {
                i += 1;
                push(&mut out, TokenKind::LParen, start, i, depth);
                depth += 1;
            }
            b')' => {
                i += 1;
                if depth == 0 {
                    out.warnings.push(LexWarning {
                        kind: LexWarningKind::UnbalancedParenthesis,
                        offset: start,
                    });
                } else {
                    depth -= 1;
                }
                push(&mut out, TokenKind::RParen, start, i, depth);
            }
            b',' => {
                i += 1;
                push(&mut out, TokenKind::Comma, start, i, depth);
            }
            b';' => {
                i += 1;
                push(&mut out, TokenKind::Semicolon, start, i, depth);
            }
            b'.' => {
                i += 1;
                push(&mut out, TokenKind::Dot, start, i, depth);
            }
            _ => {
                // Two-byte operators are kept together; the rest are single bytes.
                let two = bytes.get(i..i + 2);
                i += match two {
                    Some(b"<=" | b">=" | b"<>" | b"!=" | b"==" | b"||" | b"<<" | b">>" | b"->") => 2,
                    _ => 1,
                };
                push(&mut out, TokenKind::Punct, start, i, depth);
            }
        }
    }

    if depth > 0 {
        out.warnings.push(LexWarning {
            kind: LexWarningKind::UnbalancedParenthesis,
            offset: len,
        });
    }
    out
}

fn push(out: &mut Lexed, kind: TokenKind, start: usize, end: usize, depth: u32) {
    out.tokens.push(Token {
        kind,
        span: start..end,
        depth,
    });
}

/// Scans a quoted run starting at the opening quote at `i`. A doubled quote
/// is an escaped quote. Returns the index just past the closing quote.
fn scan_quoted(
    bytes: &[u8],
    mut i: usize,
    quote: u8,
    warnings: &mut Vec<LexWarning>,
    kind: LexWarningKind,
    start: usize,
) -> usize {
    i += 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    warnings.push(LexWarning { kind, offset: start });
    bytes.len()
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    let len = bytes.len();
    if bytes[i] == b'0' && matches!(bytes.get(i + 1), Some(b'x' | b'X')) {
        i += 2;
        while i < len && bytes[i].is_ascii_hexdigit() {
            i += 1;
        }
        return i;
    }
    while i < len && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
        i += 1;
    }
    if i < len && bytes[i] == b'.' {
        i += 1;
        while i < len && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < len && matches!(bytes[i], b'e' | b'E') {
        let mut j = i + 1;
        if j < len && matches!(bytes[j], b'+' | b'-') {
            j += 1;
        }
        if j < len && bytes[j].is_ascii_digit() {
            i = j;
            while i < len && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    i
}
