//! Site detection and edit construction for each bug type.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;

use super::scan::{int_literal, Code, Decl, IndexGroup};
use super::{BugType, MutationSite, SiteContext};
use crate::lex::{TokenKind, TokenStream};

/// A byte-level replacement of whole tokens in the correct code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Edit {
    /// Token-index interval replaced in the correct stream.
    pub tokens: Range<usize>,
    pub replacement: String,
}

/// Source text of a token interval with some sub-intervals replaced.
fn rewrite(ts: &TokenStream, span: Range<usize>, mut edits: Vec<(Range<usize>, String)>) -> String {
    edits.sort_by_key(|(r, _)| r.start);
    let mut at = ts.tokens[span.start].byte_start;
    let end = ts.tokens[span.end - 1].byte_end;
    let mut out = String::new();
    for (r, text) in edits {
        let s = ts.tokens[r.start].byte_start;
        out.push_str(&ts.source[at..s]);
        out.push_str(&text);
        at = ts.tokens[r.end - 1].byte_end;
    }
    out.push_str(&ts.source[at..end]);
    out
}

fn source_of(ts: &TokenStream, span: Range<usize>) -> &str {
    &ts.source[ts.tokens[span.start].byte_start..ts.tokens[span.end - 1].byte_end]
}

fn site(code: &Code, bug_type: BugType, pos: Range<usize>, context: SiteContext) -> MutationSite {
    MutationSite {
        bug_type,
        token_span: code.token_span(pos),
        context,
    }
}

pub(crate) fn find_sites(ts: &TokenStream, bug_type: BugType) -> Vec<MutationSite> {
    let code = Code::new(ts);
    let mut sites = match bug_type {
        BugType::Oob => oob_sites(&code),
        BugType::Init => init_sites(&code),
        BugType::Shft => shift_sites(&code),
        BugType::Inf => loop_condition_sites(&code),
        BugType::Use => unsigned_sites(&code),
        BugType::Mlu => unrolled_sites(&code),
        BugType::Zero => zero_sites(&code),
        BugType::Buf => half_buffer_sites(&code),
    };
    sites.sort_by_key(|s| (s.token_span.start, s.token_span.end));
    sites.dedup();
    sites
}

pub(crate) fn build_edit(ts: &TokenStream, site: &MutationSite, rng: &mut impl Rng) -> Option<Edit> {
    let code = Code::new(ts);
    let first = code.pos_of(site.token_span.start)?;
    let last = code.pos_of(site.token_span.end - 1)?;
    let pos = first..last + 1;
    match site.bug_type {
        BugType::Oob => oob_edit(&code, pos, rng),
        BugType::Init => init_edit(&code, pos),
        BugType::Shft => shift_edit(&code, pos, rng),
        BugType::Inf => loop_condition_edit(&code, pos, rng),
        BugType::Use => unsigned_edit(&code, pos),
        BugType::Mlu => unrolled_edit(&code, pos, rng),
        BugType::Zero => Some(Edit {
            tokens: code.token_span(pos),
            replacement: "0".into(),
        }),
        BugType::Buf => half_buffer_edit(&code, pos, site.context),
    }
}

// ---- OOB -----------------------------------------------------------------

/// `for (...; v < BOUND; ...)` where the body subscripts an array with `v`
/// in a dimension declared with exactly `BOUND`.
fn oob_sites(code: &Code) -> Vec<MutationSite> {
    let decls = code.declarations();
    let mut out = Vec::new();
    for lp in code.loops().iter().filter(|l| l.is_for) {
        let cond = lp.condition();
        if cond.len() != 3 || code.text(cond.start + 1) != "<" || !code.is_ident(cond.start) {
            continue;
        }
        let var = code.text(cond.start);
        let bound = code.text(cond.start + 2);
        if !matches!(code.kind(cond.start + 2), TokenKind::Number | TokenKind::Identifier) {
            continue;
        }
        let hit = code.index_groups(lp.body.clone()).iter().any(|g| {
            let uses_var = g.inner().any(|p| code.text(p) == var);
            uses_var
                && code
                    .find_decl(&decls, &g.array, g.open)
                    .and_then(|d| d.dims.get(g.dim))
                    .is_some_and(|&dp| code.text(dp) == bound)
        });
        if hit {
            out.push(site(code, BugType::Oob, cond, SiteContext::LoopBound));
        }
    }
    out
}

fn oob_edit(code: &Code, pos: Range<usize>, rng: &mut impl Rng) -> Option<Edit> {
    let span = code.token_span(pos.clone());
    let cmp = code.sig[pos.start + 1];
    let bound = code.sig[pos.start + 2];
    let bound_text = code.text(pos.start + 2);
    let replacement = if rng.gen_bool(0.5) {
        rewrite(code.ts, span.clone(), vec![(cmp..cmp + 1, "<=".into())])
    } else {
        let bigger = match int_literal(bound_text) {
            Some(n) => (n + 1).to_string(),
            None => format!("{bound_text} + 1"),
        };
        rewrite(code.ts, span.clone(), vec![(bound..bound + 1, bigger)])
    };
    Some(Edit {
        tokens: span,
        replacement,
    })
}

// ---- INIT / ZERO -----------------------------------------------------------

fn is_plain_local(d: &Decl) -> bool {
    d.depth >= 1
        && d.semi.is_some()
        && d.dims.is_empty()
        && !d.has_type("static")
        && !d.has_type("const")
        && !d.has_type("constexpr")
}

/// Whether the first use of `name` after `from` reads it.
fn read_before_write(code: &Code, name: &str, from: usize) -> bool {
    for p in from..code.len() {
        if code.text(p) == name && code.is_ident(p) {
            let next = code.text_at(p + 1);
            let prev = code.text_at(p.wrapping_sub(1));
            // `x = ...` is a write; `a.x` / `p->x` are other variables
            if matches!(prev, Some("." | "->")) {
                continue;
            }
            return next != Some("=");
        }
    }
    false
}

fn init_sites(code: &Code) -> Vec<MutationSite> {
    code.declarations()
        .iter()
        .filter(|d| is_plain_local(d) && d.init.is_some())
        .filter(|d| {
            let semi = d.semi.expect("local has terminator");
            code.text(semi) == ";" && read_before_write(code, &d.name, semi + 1)
        })
        .map(|d| {
            let semi = d.semi.expect("checked");
            site(code, BugType::Init, d.type_start..semi + 1, SiteContext::DeclInitializer)
        })
        .collect()
}

fn init_edit(code: &Code, pos: Range<usize>) -> Option<Edit> {
    let decls = code.declarations();
    let d = decls.iter().find(|d| d.type_start == pos.start && d.semi == Some(pos.end - 1))?;
    let ts = code.ts;
    let name = &ts.tokens[code.sig[d.name_pos]];
    let semi = &ts.tokens[code.sig[pos.end - 1]];
    let start = ts.tokens[code.sig[pos.start]].byte_start;
    let replacement = format!(
        "{}{}",
        &ts.source[start..name.byte_end],
        &ts.source[semi.byte_start..semi.byte_end]
    );
    Some(Edit {
        tokens: code.token_span(pos),
        replacement,
    })
}

fn zero_sites(code: &Code) -> Vec<MutationSite> {
    code.declarations()
        .iter()
        .filter(|d| d.dims.is_empty() && !d.has_type("const") && !d.has_type("constexpr"))
        .filter_map(|d| {
            let init = d.init.clone()?;
            (init.len() == 1
                && code.kind(init.start) == TokenKind::Number
                && int_literal(code.text(init.start)).is_some_and(|v| v != 0))
            .then(|| site(code, BugType::Zero, init, SiteContext::NonzeroInitializer))
        })
        .collect()
}

// ---- SHFT ------------------------------------------------------------------

fn shift_width(code: &Code, decls: &[Decl], op: usize) -> u32 {
    let lhs = op.checked_sub(1).filter(|&p| code.is_ident(p)).or_else(|| {
        // `a[i] << k`: look through the subscript
        (code.text_at(op.wrapping_sub(1)) == Some("]"))
            .then(|| (0..op).rev().find(|&p| code.is_ident(p) && code.text_at(p + 1) == Some("[")))
            .flatten()
    });
    lhs.and_then(|p| code.find_decl(decls, code.text(p), p))
        .map_or(32, Decl::bit_width)
}

fn shift_sites(code: &Code) -> Vec<MutationSite> {
    let decls = code.declarations();
    let mut out = Vec::new();
    for p in 0..code.len().saturating_sub(1) {
        if !matches!(code.text(p), "<<" | ">>" | "<<=" | ">>=") || p == 0 {
            continue;
        }
        let prev = code.tok(p - 1);
        if !(prev.kind == TokenKind::Identifier || prev.is(")") || prev.is("]")) {
            continue;
        }
        if code.kind(p + 1) != TokenKind::Number {
            continue;
        }
        let Some(amount) = int_literal(code.text(p + 1)) else { continue };
        if amount < u64::from(shift_width(code, &decls, p)) {
            out.push(site(code, BugType::Shft, p + 1..p + 2, SiteContext::ShiftAmount));
        }
    }
    out
}

fn shift_edit(code: &Code, pos: Range<usize>, rng: &mut impl Rng) -> Option<Edit> {
    let decls = code.declarations();
    let width = shift_width(code, &decls, pos.start.checked_sub(1)?);
    let offset: u32 = rng.gen_range(1..=8);
    Some(Edit {
        tokens: code.token_span(pos),
        replacement: (width + offset).to_string(),
    })
}

// ---- INF -------------------------------------------------------------------

fn relational_at_top(code: &Code, range: Range<usize>) -> Option<usize> {
    let mut depth = 0i32;
    for p in range {
        match code.text(p) {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            "<" | "<=" | ">" | ">=" if depth == 0 => return Some(p),
            _ => {}
        }
    }
    None
}

fn loop_condition_sites(code: &Code) -> Vec<MutationSite> {
    code.loops()
        .iter()
        .filter(|lp| {
            relational_at_top(code, lp.condition()).is_some()
                || lp.increment().is_some_and(|r| !r.is_empty())
        })
        .map(|lp| site(code, BugType::Inf, lp.open + 1..lp.close, SiteContext::LoopCondition))
        .collect()
}

fn loop_condition_edit(code: &Code, pos: Range<usize>, rng: &mut impl Rng) -> Option<Edit> {
    let lp = code.loops().into_iter().find(|l| l.open + 1 == pos.start && l.close == pos.end)?;
    let mut variants = Vec::new();
    if let Some(op) = relational_at_top(code, lp.condition()) {
        let inverted = match code.text(op) {
            "<" => ">",
            "<=" => ">=",
            ">" => "<",
            _ => "<=",
        };
        variants.push(Edit {
            tokens: code.token_span(op..op + 1),
            replacement: inverted.into(),
        });
    }
    if let (Some(inc), Some((_, semi))) = (lp.increment(), lp.semis) {
        if !inc.is_empty() {
            // keep the separator so the buggy side is never empty
            variants.push(Edit {
                tokens: code.token_span(semi..inc.end),
                replacement: ";".into(),
            });
        }
    }
    variants.choose(rng).cloned()
}

// ---- USE -------------------------------------------------------------------

const SIZED: &[&str] = &["int", "char", "short", "long"];

fn unsigned_sites(code: &Code) -> Vec<MutationSite> {
    let decls = code.declarations();
    let mut out = Vec::new();
    for d in &decls {
        let Some(u) = (d.type_start..d.name_pos).find(|&p| code.text(p) == "unsigned") else {
            continue;
        };
        let end = if code.text_at(u + 1).is_some_and(|t| SIZED.contains(&t)) {
            u + 2
        } else {
            u + 1
        };
        if feeds_widening(code, &decls, d) {
            out.push(site(code, BugType::Use, u..end, SiteContext::UnsignedDecl));
        }
    }
    out
}

/// The variable is shifted, or assigned into a 64-bit variable.
fn feeds_widening(code: &Code, decls: &[Decl], d: &Decl) -> bool {
    let stmts = code.statements();
    for p in d.name_pos + 1..code.len() {
        if code.text(p) != d.name || !code.is_ident(p) {
            continue;
        }
        if matches!(code.text_at(p + 1), Some("<<" | ">>" | "<<=" | ">>=")) {
            return true;
        }
        let Some(stmt) = stmts.iter().find(|s| s.contains(&p)) else { continue };
        let Some(eq) = stmt.clone().find(|&q| code.text(q) == "=") else { continue };
        if eq > p || eq == 0 {
            continue;
        }
        let target = (stmt.start..eq).rev().find(|&q| code.is_ident(q));
        let wide = target
            .and_then(|q| code.find_decl(decls, code.text(q), q))
            .is_some_and(|t| t.bit_width() == 64);
        if wide {
            return true;
        }
    }
    false
}

fn unsigned_edit(code: &Code, pos: Range<usize>) -> Option<Edit> {
    let replacement = if pos.len() == 2 {
        code.text(pos.start + 1).to_string()
    } else {
        "int".to_string()
    };
    Some(Edit {
        tokens: code.token_span(pos),
        replacement,
    })
}

// ---- MLU -------------------------------------------------------------------

/// Statement shape with subscript offsets factored out: the canonical
/// token texts, and for each subscript the interval of its content and its
/// constant offset.
struct Unrolled {
    canonical: Vec<String>,
    groups: Vec<(Range<usize>, i64)>,
}

fn unrolled_shape(code: &Code, stmt: Range<usize>) -> Option<Unrolled> {
    if stmt.clone().any(|p| matches!(code.text(p), "for" | "while" | "if" | "return")) {
        return None;
    }
    let groups = code.index_groups(stmt.clone());
    if groups.is_empty() {
        return None;
    }
    let mut canonical = Vec::new();
    let mut parsed = Vec::new();
    let mut p = stmt.start;
    let mut gi = 0;
    while p < stmt.end {
        if gi < groups.len() && p == groups[gi].open {
            let g = &groups[gi];
            let inner = g.inner();
            let (base, offset) = if inner.len() >= 3
                && code.text(inner.end - 2) == "+"
                && code.kind(inner.end - 1) == TokenKind::Number
            {
                let off = int_literal(code.text(inner.end - 1))? as i64;
                (inner.start..inner.end - 2, off)
            } else {
                (inner.clone(), 0)
            };
            canonical.push("[".into());
            canonical.extend(base.map(|q| code.text(q).to_string()));
            canonical.push("]".into());
            parsed.push((inner, offset));
            p = g.close + 1;
            gi += 1;
        } else {
            canonical.push(code.text(p).to_string());
            p += 1;
        }
    }
    Some(Unrolled {
        canonical,
        groups: parsed,
    })
}

/// Pairs of adjacent statements identical up to subscript offsets; yields
/// `(statement, predecessor)`.
fn unrolled_pairs(code: &Code) -> Vec<(Range<usize>, Range<usize>)> {
    let stmts = code.statements();
    let mut out = Vec::new();
    for w in stmts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.end != b.start {
            continue;
        }
        let (Some(sa), Some(sb)) = (unrolled_shape(code, a.clone()), unrolled_shape(code, b.clone())) else {
            continue;
        };
        let differs = sa.groups.iter().zip(&sb.groups).any(|(x, y)| x.1 != y.1);
        if sa.canonical == sb.canonical && differs {
            out.push((b.clone(), a.clone()));
        }
    }
    out
}

fn unrolled_sites(code: &Code) -> Vec<MutationSite> {
    unrolled_pairs(code)
        .into_iter()
        .map(|(stmt, _)| site(code, BugType::Mlu, stmt, SiteContext::UnrolledStatement))
        .collect()
}

fn unrolled_edit(code: &Code, pos: Range<usize>, rng: &mut impl Rng) -> Option<Edit> {
    let (stmt, prev) = unrolled_pairs(code).into_iter().find(|(s, _)| *s == pos)?;
    let cur = unrolled_shape(code, stmt.clone())?;
    let before = unrolled_shape(code, prev)?;
    let candidates: Vec<usize> = (0..cur.groups.len())
        .filter(|&i| cur.groups[i].1 != before.groups[i].1)
        .collect();
    let &i = candidates.choose(rng)?;
    let target = code.token_span(cur.groups[i].0.clone());
    let text = source_of(code.ts, code.token_span(before.groups[i].0.clone())).to_string();
    let span = code.token_span(stmt);
    Some(Edit {
        replacement: rewrite(code.ts, span.clone(), vec![(target, text)]),
        tokens: span,
    })
}

// ---- BUF -------------------------------------------------------------------

/// Positions of a half-size offset at the end of a subscript:
/// `base + HALF`, `base + N/2`, `base + (N/2)` or `base + <size/2>`.
fn half_offset(code: &Code, decls: &[Decl], g: &IndexGroup) -> Option<(Range<usize>, Range<usize>)> {
    let inner = g.inner();
    let plus = inner.clone().find(|&p| code.text(p) == "+")?;
    if plus == inner.start {
        return None;
    }
    let base = inner.start..plus;
    let off = plus + 1..inner.end;
    let texts: Vec<&str> = off.clone().map(|p| code.text(p)).collect();
    let is_half = match texts.as_slice() {
        [t] if code.kind(off.start) == TokenKind::Identifier => t.to_ascii_lowercase().contains("half"),
        [t] => {
            let size = code
                .find_decl(decls, &g.array, g.open)
                .and_then(|d| d.dims.get(g.dim))
                .and_then(|&p| int_literal(code.text(p)));
            matches!((int_literal(t), size), (Some(v), Some(s)) if s >= 2 && s % 2 == 0 && v == s / 2)
        }
        [_, "/", "2"] | ["(", _, "/", "2", ")"] => true,
        _ => false,
    };
    is_half.then_some((base, off))
}

fn half_buffer_sites(code: &Code) -> Vec<MutationSite> {
    let decls = code.declarations();
    let groups = code.index_groups(0..code.len());
    let mut out = Vec::new();
    let mut halved: BTreeMap<&str, ()> = BTreeMap::new();
    for g in &groups {
        if let Some((base, off)) = half_offset(code, &decls, g) {
            halved.insert(&g.array, ());
            out.push(site(code, BugType::Buf, base.start..off.end, SiteContext::HalfOffset));
        }
    }
    for g in &groups {
        let inner = g.inner();
        if halved.contains_key(g.array.as_str()) && inner.len() == 1 && code.is_ident(inner.start) && !is_lhs(code, g) {
            out.push(site(code, BugType::Buf, inner, SiteContext::MissingHalfOffset));
        }
    }
    out
}

/// Subscript on the left of a plain assignment (a write, not a copy source).
fn is_lhs(code: &Code, g: &IndexGroup) -> bool {
    let mut p = g.close + 1;
    while code.text_at(p) == Some("[") {
        match code.matching(p) {
            Some(c) => p = c + 1,
            None => return false,
        }
    }
    code.text_at(p) == Some("=")
}

fn half_buffer_edit(code: &Code, pos: Range<usize>, context: SiteContext) -> Option<Edit> {
    let decls = code.declarations();
    let groups = code.index_groups(0..code.len());
    match context {
        SiteContext::HalfOffset => {
            let g = groups.iter().find(|g| {
                half_offset(code, &decls, g).is_some_and(|(b, o)| b.start == pos.start && o.end == pos.end)
            })?;
            let (base, _) = half_offset(code, &decls, g)?;
            Some(Edit {
                tokens: code.token_span(pos),
                replacement: source_of(code.ts, code.token_span(base)).to_string(),
            })
        }
        SiteContext::MissingHalfOffset => {
            let g = groups.iter().find(|g| g.inner() == pos)?;
            let (_, off) = groups
                .iter()
                .filter(|h| h.array == g.array)
                .find_map(|h| half_offset(code, &decls, h))?;
            let off_text = source_of(code.ts, code.token_span(off));
            Some(Edit {
                tokens: code.token_span(pos.clone()),
                replacement: format!("{} + {off_text}", code.text(pos.start)),
            })
        }
        _ => None,
    }
}
