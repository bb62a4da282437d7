//! Light structural scans over the non-trivia tokens of a stream.

use std::ops::Range;

use crate::lex::{Token, TokenKind, TokenStream};

/// Keywords that may start or continue a declaration's type.
const TYPE_KEYWORDS: &[&str] = &[
    "const", "constexpr", "static", "volatile", "register", "unsigned", "signed", "int", "long",
    "short", "char", "float", "double", "bool", "auto",
];

pub(crate) fn is_type_keyword(text: &str) -> bool {
    TYPE_KEYWORDS.contains(&text)
}

/// Value of an integer literal (`0x` hex, `u`/`l` suffixes), if it is one.
pub(crate) fn int_literal(text: &str) -> Option<u64> {
    let body = text.trim_end_matches(['u', 'U', 'l', 'L']);
    if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        body.parse().ok()
    }
}

/// View over the significant (non-comment, non-pragma) tokens.
/// Positions (`usize` "pos") index into `sig`; token indices index the
/// stream.
pub(crate) struct Code<'a> {
    pub ts: &'a TokenStream,
    pub sig: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Decl {
    /// Texts of the type tokens, in order.
    pub type_texts: Vec<String>,
    /// Position of the first type token.
    pub type_start: usize,
    pub name: String,
    pub name_pos: usize,
    /// Positions of each dimension's single size token.
    pub dims: Vec<usize>,
    /// Initializer positions (exclusive of `=` and the terminator).
    pub init: Option<Range<usize>>,
    /// Position of the terminating `;`, for statement-level declarations.
    pub semi: Option<usize>,
    /// Brace nesting depth at the declaration.
    pub depth: usize,
}

impl Decl {
    pub fn has_type(&self, text: &str) -> bool {
        self.type_texts.iter().any(|t| t == text)
    }

    pub fn bit_width(&self) -> u32 {
        let longs = self.type_texts.iter().filter(|t| *t == "long").count();
        let wide_alias = self.type_texts.iter().any(|t| t.contains("64"));
        if longs >= 1 || wide_alias {
            64
        } else {
            32
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Loop {
    pub is_for: bool,
    pub open: usize,
    pub close: usize,
    /// For `for` loops: positions of the two header semicolons.
    pub semis: Option<(usize, usize)>,
    /// Body positions, including braces when present.
    pub body: Range<usize>,
}

impl Loop {
    pub fn condition(&self) -> Range<usize> {
        match self.semis {
            Some((a, b)) => a + 1..b,
            None => self.open + 1..self.close,
        }
    }

    pub fn increment(&self) -> Option<Range<usize>> {
        self.semis.map(|(_, b)| b + 1..self.close)
    }
}

/// `[ ... ]` group following an identifier.
#[derive(Debug, Clone)]
pub(crate) struct IndexGroup {
    pub array: String,
    /// 0-based dimension of this subscript.
    pub dim: usize,
    pub open: usize,
    pub close: usize,
}

impl IndexGroup {
    pub fn inner(&self) -> Range<usize> {
        self.open + 1..self.close
    }
}

impl<'a> Code<'a> {
    pub fn new(ts: &'a TokenStream) -> Self {
        let sig = ts
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_trivia())
            .map(|(i, _)| i)
            .collect();
        Code { ts, sig }
    }

    pub fn len(&self) -> usize {
        self.sig.len()
    }

    pub fn tok(&self, pos: usize) -> &Token {
        &self.ts.tokens[self.sig[pos]]
    }

    pub fn text(&self, pos: usize) -> &str {
        &self.tok(pos).text
    }

    pub fn text_at(&self, pos: usize) -> Option<&str> {
        (pos < self.sig.len()).then(|| self.text(pos))
    }

    pub fn kind(&self, pos: usize) -> TokenKind {
        self.tok(pos).kind
    }

    pub fn is_ident(&self, pos: usize) -> bool {
        pos < self.len() && self.kind(pos) == TokenKind::Identifier
    }

    /// Token-index interval covering the given positions.
    pub fn token_span(&self, pos: Range<usize>) -> Range<usize> {
        debug_assert!(!pos.is_empty());
        self.sig[pos.start]..self.sig[pos.end - 1] + 1
    }

    /// Position of a token index, if it is significant.
    pub fn pos_of(&self, token_index: usize) -> Option<usize> {
        self.sig.binary_search(&token_index).ok()
    }

    /// Matching closer for `(`, `[` or `{` at `pos`.
    pub fn matching(&self, pos: usize) -> Option<usize> {
        let (open, close) = match self.text(pos) {
            "(" => ("(", ")"),
            "[" => ("[", "]"),
            "{" => ("{", "}"),
            _ => return None,
        };
        let mut depth = 0usize;
        for p in pos..self.len() {
            let t = self.text(p);
            if t == open {
                depth += 1;
            } else if t == close {
                depth -= 1;
                if depth == 0 {
                    return Some(p);
                }
            }
        }
        None
    }

    /// Brace depth before each position.
    pub fn brace_depths(&self) -> Vec<usize> {
        let mut depth = 0usize;
        (0..self.len())
            .map(|p| {
                let here = depth;
                match self.text(p) {
                    "{" => depth += 1,
                    "}" => depth = depth.saturating_sub(1),
                    _ => {}
                }
                here
            })
            .collect()
    }

    /// Statement ranges (positions, inclusive of the trailing `;`). `for`
    /// headers are skipped so their semicolons do not split statements.
    pub fn statements(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut p = 0;
        while p < self.len() {
            match self.text(p) {
                "{" | "}" => start = p + 1,
                ";" => {
                    if start < p {
                        out.push(start..p + 1);
                    }
                    start = p + 1;
                }
                "for" | "while" | "if" | "switch" if self.text_at(p + 1) == Some("(") => {
                    if let Some(close) = self.matching(p + 1) {
                        p = close;
                        start = close + 1;
                    }
                }
                _ => {}
            }
            p += 1;
        }
        out
    }

    /// Skips a template argument list starting at `<`, returning the
    /// position after the matching `>`.
    fn skip_template(&self, pos: usize) -> Option<usize> {
        let mut depth = 0i32;
        for p in pos..self.len().min(pos + 16) {
            match self.text(p) {
                "<" => depth += 1,
                ">" => depth -= 1,
                ">>" => depth -= 2,
                ";" | "{" | "}" | "=" => return None,
                _ => {}
            }
            if depth <= 0 {
                return Some(p + 1);
            }
        }
        None
    }

    /// Declarators of the form `TYPE name [dims] (= init)? (; | , | ))`,
    /// found both in statements and parameter lists.
    pub fn declarations(&self) -> Vec<Decl> {
        let depths = self.brace_depths();
        let mut out = Vec::new();
        let mut p = 0;
        while p < self.len() {
            let prev = p.checked_sub(1).map(|q| self.text(q));
            let starts_decl = matches!(prev, None | Some(";" | "{" | "}" | "(" | ","));
            if !starts_decl || !(is_type_keyword(self.text(p)) || self.is_ident(p)) {
                p += 1;
                continue;
            }
            // type tokens
            let type_start = p;
            let mut q = p;
            let mut type_texts = Vec::new();
            while q < self.len() {
                let t = self.text(q);
                if is_type_keyword(t) {
                    type_texts.push(t.to_string());
                    q += 1;
                } else if self.is_ident(q) && self.is_ident(q + 1) || self.is_ident(q) && self.text_at(q + 1) == Some("::") {
                    type_texts.push(t.to_string());
                    q += 1;
                } else if self.is_ident(q) && self.text_at(q + 1) == Some("<") {
                    let Some(after) = self.skip_template(q + 1) else { break };
                    type_texts.push((q..after).map(|r| self.text(r)).collect::<String>());
                    q = after;
                } else if t == "::" {
                    q += 1;
                } else {
                    break;
                }
            }
            if type_texts.is_empty() || !self.is_ident(q) {
                p += 1;
                continue;
            }
            let name_pos = q;
            let mut r = q + 1;
            let mut dims = Vec::new();
            while self.text_at(r) == Some("[") && self.text_at(r + 2) == Some("]") {
                dims.push(r + 1);
                r += 3;
            }
            let mut init = None;
            if self.text_at(r) == Some("=") {
                let begin = r + 1;
                let mut depth = 0i32;
                let mut e = begin;
                while e < self.len() {
                    match self.text(e) {
                        "(" | "[" | "{" => depth += 1,
                        ")" | "]" | "}" if depth > 0 => depth -= 1,
                        ";" | "," | ")" if depth == 0 => break,
                        _ => {}
                    }
                    e += 1;
                }
                if e == begin || e >= self.len() {
                    p += 1;
                    continue;
                }
                init = Some(begin..e);
                r = e;
            }
            let terminator = self.text_at(r);
            if !matches!(terminator, Some(";" | "," | ")")) {
                p += 1;
                continue;
            }
            out.push(Decl {
                type_texts,
                type_start,
                name: self.text(name_pos).to_string(),
                name_pos,
                dims,
                init,
                semi: (terminator == Some(";")).then_some(r),
                depth: depths[type_start],
            });
            p = r + 1;
        }
        out
    }

    pub fn find_decl<'d>(&self, decls: &'d [Decl], name: &str, before: usize) -> Option<&'d Decl> {
        decls
            .iter()
            .rev()
            .find(|d| d.name == name && d.name_pos < before)
            .or_else(|| decls.iter().find(|d| d.name == name))
    }

    pub fn loops(&self) -> Vec<Loop> {
        let mut out = Vec::new();
        for p in 0..self.len() {
            let is_for = match self.text(p) {
                "for" => true,
                "while" => false,
                _ => continue,
            };
            if self.text_at(p + 1) != Some("(") {
                continue;
            }
            let open = p + 1;
            let Some(close) = self.matching(open) else { continue };
            let semis = if is_for {
                let mut depth = 0;
                let mut found = Vec::new();
                for q in open + 1..close {
                    match self.text(q) {
                        "(" | "[" => depth += 1,
                        ")" | "]" => depth -= 1,
                        ";" if depth == 0 => found.push(q),
                        _ => {}
                    }
                }
                if found.len() != 2 {
                    continue;
                }
                Some((found[0], found[1]))
            } else {
                // do { } while (...); has no body of its own
                if self.text_at(close + 1) == Some(";") {
                    continue;
                }
                None
            };
            let body_start = close + 1;
            let body_end = if self.text_at(body_start) == Some("{") {
                match self.matching(body_start) {
                    Some(e) => e + 1,
                    None => continue,
                }
            } else {
                match (body_start..self.len()).find(|&q| self.text(q) == ";") {
                    Some(e) => e + 1,
                    None => continue,
                }
            };
            out.push(Loop {
                is_for,
                open,
                close,
                semis,
                body: body_start..body_end,
            });
        }
        out
    }

    /// Subscript groups `name[...]...` whose brackets contain no nested `[`.
    pub fn index_groups(&self, within: Range<usize>) -> Vec<IndexGroup> {
        let mut out = Vec::new();
        let mut p = within.start;
        while p < within.end {
            if self.is_ident(p) && self.text_at(p + 1) == Some("[") {
                let array = self.text(p).to_string();
                let mut open = p + 1;
                let mut dim = 0;
                while open < within.end && self.text(open) == "[" {
                    let Some(close) = self.matching(open) else { break };
                    if (open + 1..close).all(|q| self.text(q) != "[") && close > open + 1 {
                        out.push(IndexGroup {
                            array: array.clone(),
                            dim,
                            open,
                            close,
                        });
                    }
                    dim += 1;
                    open = close + 1;
                }
                p = open;
            } else {
                p += 1;
            }
        }
        out
    }
}
