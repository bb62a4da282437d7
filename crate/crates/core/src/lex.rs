//! Lexer for HLS-flavored C/C++.
//!
//! Every non-whitespace byte of the input belongs to exactly one token, so a
//! token stream plus the gaps between tokens reproduces the source exactly.
//! Comments and `#pragma` lines are kept as tokens.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    StringLit,
    CharLit,
    Operator,
    Punct,
    Pragma,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub byte_start: usize,
    pub byte_end: usize,
    /// 1-based.
    pub line: usize,
    /// 1-based, counted in bytes.
    pub col: usize,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }

    pub fn span(&self) -> Range<usize> {
        self.byte_start..self.byte_end
    }

    /// Comments and pragmas carry no program structure.
    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Comment | TokenKind::Pragma)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub source: String,
    pub tokens: Vec<Token>,
}

const KEYWORDS: &[&str] = &[
    "auto", "bool", "break", "case", "char", "class", "const", "constexpr", "continue", "default",
    "delete", "do", "double", "else", "enum", "extern", "false", "float", "for", "goto", "if",
    "inline", "int", "long", "namespace", "new", "nullptr", "private", "protected", "public",
    "register", "return", "short", "signed", "sizeof", "static", "struct", "switch", "template",
    "true", "typedef", "typename", "union", "unsigned", "using", "void", "volatile", "while",
];

const OPERATORS_3: &[&str] = &["<<=", ">>=", "..."];
const OPERATORS_2: &[&str] = &[
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "++", "--", "->", "::",
];
const OPERATORS_1: &[u8] = b"+-*/%<>=!&|^~?:";

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

struct Cursor<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    line_start: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self, ahead: usize) -> Option<u8> {
        self.bytes.get(self.pos + ahead).copied()
    }

    fn col(&self) -> usize {
        self.pos - self.line_start + 1
    }

    fn bump(&mut self) {
        if self.bytes[self.pos] == b'\n' {
            self.line += 1;
            self.line_start = self.pos + 1;
        }
        self.pos += 1;
    }

    fn at_line_start(&self) -> bool {
        self.bytes[self.line_start..self.pos]
            .iter()
            .all(|b| b.is_ascii_whitespace())
    }

    fn error(&self, line: usize, col: usize, message: &str) -> Error {
        Error::Lex {
            line,
            col,
            message: message.to_string(),
        }
    }
}

/// Splits `source` into tokens. Whitespace is never a token; unknown
/// characters become single-character `Punct` tokens.
pub fn lex(source: &str) -> Result<TokenStream> {
    let mut c = Cursor {
        src: source,
        bytes: source.as_bytes(),
        pos: 0,
        line: 1,
        line_start: 0,
    };
    let mut tokens = Vec::new();

    while let Some(b) = c.peek(0) {
        if b.is_ascii_whitespace() {
            c.bump();
            continue;
        }
        let start = c.pos;
        let (line, col) = (c.line, c.col());

        let kind = if b == b'#' && c.at_line_start() && c.src[c.pos + 1..].trim_start_matches([' ', '\t']).starts_with("pragma") {
            while c.peek(0).is_some_and(|b| b != b'\n') {
                c.bump();
            }
            // trailing blanks (including '\r') stay in the gap
            while c.pos > start + 1 && c.bytes[c.pos - 1].is_ascii_whitespace() {
                c.pos -= 1;
            }
            TokenKind::Pragma
        } else if b == b'/' && c.peek(1) == Some(b'/') {
            while c.peek(0).is_some_and(|b| b != b'\n') {
                c.bump();
            }
            while c.pos > start + 2 && c.bytes[c.pos - 1].is_ascii_whitespace() {
                c.pos -= 1;
            }
            TokenKind::Comment
        } else if b == b'/' && c.peek(1) == Some(b'*') {
            c.bump();
            c.bump();
            loop {
                match c.peek(0) {
                    None => return Err(c.error(line, col, "unterminated block comment")),
                    Some(b'*') if c.peek(1) == Some(b'/') => {
                        c.bump();
                        c.bump();
                        break;
                    }
                    Some(_) => c.bump(),
                }
            }
            TokenKind::Comment
        } else if b == b'"' || b == b'\'' {
            c.bump();
            loop {
                match c.peek(0) {
                    None | Some(b'\n') => {
                        let what = if b == b'"' { "string" } else { "character" };
                        return Err(c.error(line, col, &format!("unterminated {what} literal")));
                    }
                    Some(b'\\') => {
                        c.bump();
                        if c.peek(0).is_some() {
                            c.bump();
                        }
                    }
                    Some(q) if q == b => {
                        c.bump();
                        break;
                    }
                    Some(_) => c.bump(),
                }
            }
            if b == b'"' {
                TokenKind::StringLit
            } else {
                TokenKind::CharLit
            }
        } else if b.is_ascii_digit() || (b == b'.' && c.peek(1).is_some_and(|d| d.is_ascii_digit())) {
            let hex = c.src[start..].starts_with("0x") || c.src[start..].starts_with("0X");
            c.bump();
            while let Some(d) = c.peek(0) {
                let prev = c.bytes[c.pos - 1];
                let sign = matches!(d, b'+' | b'-')
                    && if hex {
                        matches!(prev, b'p' | b'P')
                    } else {
                        matches!(prev, b'e' | b'E')
                    };
                if d.is_ascii_alphanumeric() || d == b'_' || d == b'.' || sign {
                    c.bump();
                } else {
                    break;
                }
            }
            TokenKind::Number
        } else if b.is_ascii_alphabetic() || b == b'_' {
            while c.peek(0).is_some_and(|d| d.is_ascii_alphanumeric() || d == b'_') {
                c.bump();
            }
            if is_keyword(&c.src[start..c.pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if let Some(op) = OPERATORS_3
            .iter()
            .chain(OPERATORS_2)
            .find(|op| c.src[c.pos..].starts_with(**op))
        {
            c.pos += op.len();
            TokenKind::Operator
        } else if OPERATORS_1.contains(&b) {
            c.bump();
            TokenKind::Operator
        } else {
            // One whole character, so spans stay on UTF-8 boundaries.
            let width = c.src[c.pos..].chars().next().map_or(1, char::len_utf8);
            c.pos += width;
            TokenKind::Punct
        };

        tokens.push(Token {
            kind,
            text: source[start..c.pos].to_string(),
            byte_start: start,
            byte_end: c.pos,
            line,
            col,
        });
    }

    Ok(TokenStream {
        source: source.to_string(),
        tokens,
    })
}

impl TokenStream {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Rebuilds the source from token texts and the gaps between them.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.source.len());
        let mut at = 0;
        for t in &self.tokens {
            out.push_str(&self.source[at..t.byte_start]);
            out.push_str(&t.text);
            at = t.byte_end;
        }
        out.push_str(&self.source[at..]);
        out
    }

    /// Indices of tokens whose byte ranges intersect `range`, as a half-open
    /// index interval (empty when nothing intersects).
    pub fn tokens_in_byte_range(&self, range: Range<usize>) -> Result<Range<usize>> {
        if range.start > range.end {
            return Err(Error::arg(format!(
                "inverted byte range {}..{}",
                range.start, range.end
            )));
        }
        if range.end > self.source.len() {
            return Err(Error::arg(format!(
                "byte range {}..{} exceeds source length {}",
                range.start,
                range.end,
                self.source.len()
            )));
        }
        let first = self.tokens.partition_point(|t| t.byte_end <= range.start);
        let last = self.tokens.partition_point(|t| t.byte_start < range.end);
        Ok(if first < last { first..last } else { first..first })
    }

    /// Distinct line numbers of the given tokens.
    pub fn lines_of_tokens(&self, indices: impl IntoIterator<Item = usize>) -> Result<BTreeSet<usize>> {
        indices
            .into_iter()
            .map(|i| {
                self.tokens.get(i).map(|t| t.line).ok_or_else(|| {
                    Error::arg(format!("token index {i} out of range ({} tokens)", self.tokens.len()))
                })
            })
            .collect()
    }

    /// Number of source lines (a trailing newline does not open a new line).
    pub fn line_count(&self) -> usize {
        let n = self.source.matches('\n').count();
        if self.source.ends_with('\n') || self.source.is_empty() {
            n.max(1)
        } else {
            n + 1
        }
    }
}
