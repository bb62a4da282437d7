//! Deterministic injection of labeled logic bugs.
//!
//! Each [`BugType`] has a structural pattern ([`find_sites`]) and a rewrite
//! rule ([`inject`]). Every produced [`BugRecord`] carries exact token and
//! line labels and can be spliced back into the correct code.

mod rules;
mod scan;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::SampleRecord;
use crate::error::{Error, Result};
use crate::lex::{lex, TokenStream};

/// The eight benchmark logic-bug categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BugType {
    /// Out-of-bounds array access.
    #[serde(rename = "OOB")]
    Oob,
    /// Read of an uninitialized variable.
    #[serde(rename = "INIT")]
    Init,
    /// Shift by an out-of-range amount.
    #[serde(rename = "SHFT")]
    Shft,
    /// Loop that never terminates correctly.
    #[serde(rename = "INF")]
    Inf,
    /// Unintended sign extension.
    #[serde(rename = "USE")]
    Use,
    /// Mistake in manual loop unrolling.
    #[serde(rename = "MLU")]
    Mlu,
    /// Zero initializer where a nonzero one was meant.
    #[serde(rename = "ZERO")]
    Zero,
    /// Copy from the wrong half of a split buffer.
    #[serde(rename = "BUF")]
    Buf,
}

impl BugType {
    pub const ALL: [BugType; 8] = [
        BugType::Oob,
        BugType::Init,
        BugType::Shft,
        BugType::Inf,
        BugType::Use,
        BugType::Mlu,
        BugType::Zero,
        BugType::Buf,
    ];

    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BugType> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BugType::Oob => "OOB",
            BugType::Init => "INIT",
            BugType::Shft => "SHFT",
            BugType::Inf => "INF",
            BugType::Use => "USE",
            BugType::Mlu => "MLU",
            BugType::Zero => "ZERO",
            BugType::Buf => "BUF",
        }
    }
}

impl fmt::Display for BugType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BugType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::arg(format!("unknown bug type `{s}`")))
    }
}

/// Which pattern a site matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteContext {
    LoopBound,
    DeclInitializer,
    NonzeroInitializer,
    ShiftAmount,
    LoopCondition,
    UnsignedDecl,
    UnrolledStatement,
    HalfOffset,
    MissingHalfOffset,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MutationSite {
    pub bug_type: BugType,
    /// Token-index interval in the correct stream.
    pub token_span: Range<usize>,
    pub context: SiteContext,
}

/// One supervised sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugRecord {
    pub id: String,
    pub correct_code: String,
    pub buggy_code: String,
    pub snippet_correct: String,
    pub snippet_buggy: String,
    pub bug_type: BugType,
    /// Half-open byte interval of `snippet_buggy` within `buggy_code`.
    pub buggy_byte_span: (usize, usize),
    pub token_labels: Vec<u8>,
    pub line_labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug_analysis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Fields this version does not know about, kept for round-tripping.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl BugRecord {
    /// Builds a record by replacing `correct_span` (bytes of `correct_code`)
    /// with `replacement`, deriving every label from the buggy code.
    pub fn from_splice(
        id: impl Into<String>,
        correct_code: &str,
        correct_span: Range<usize>,
        replacement: &str,
        bug_type: BugType,
    ) -> Result<BugRecord> {
        if correct_span.start > correct_span.end
            || correct_span.end > correct_code.len()
            || !correct_code.is_char_boundary(correct_span.start)
            || !correct_code.is_char_boundary(correct_span.end)
        {
            return Err(Error::arg(format!(
                "byte span {}..{} does not fit the correct code",
                correct_span.start, correct_span.end
            )));
        }
        let buggy_code = format!(
            "{}{}{}",
            &correct_code[..correct_span.start],
            replacement,
            &correct_code[correct_span.end..]
        );
        let span = correct_span.start..correct_span.start + replacement.len();
        let stream = lex(&buggy_code)?;
        let (token_labels, line_labels) = labels_for(&stream, span.clone())?;
        Ok(BugRecord {
            id: id.into(),
            correct_code: correct_code.to_string(),
            snippet_correct: correct_code[correct_span].to_string(),
            snippet_buggy: replacement.to_string(),
            buggy_code,
            bug_type,
            buggy_byte_span: (span.start, span.end),
            token_labels,
            line_labels,
            function_note: None,
            bug_analysis: None,
            strategy: None,
            extra: Map::new(),
        })
    }

    pub fn byte_span(&self) -> Range<usize> {
        self.buggy_byte_span.0..self.buggy_byte_span.1
    }

    /// Token indices labeled buggy.
    pub fn buggy_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.token_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i)
    }
}

fn labels_for(stream: &TokenStream, span: Range<usize>) -> Result<(Vec<u8>, Vec<usize>)> {
    let hit = stream.tokens_in_byte_range(span)?;
    let labels = (0..stream.n_tokens()).map(|i| u8::from(hit.contains(&i))).collect();
    let lines = stream.lines_of_tokens(hit)?.into_iter().collect();
    Ok((labels, lines))
}

/// All sites in `stream` for one bug type, in source order.
pub fn find_sites(stream: &TokenStream, bug_type: BugType) -> Vec<MutationSite> {
    rules::find_sites(stream, bug_type)
}

/// Applies the bug-type operator at `site`. `seed` picks among operator
/// variants.
pub fn inject(stream: &TokenStream, site: &MutationSite, seed: u64) -> Result<BugRecord> {
    let mismatch = || Error::arg(format!("site {site:?} does not belong to this token stream"));
    if site.token_span.is_empty() || site.token_span.end > stream.n_tokens() {
        return Err(mismatch());
    }
    if !find_sites(stream, site.bug_type).contains(site) {
        return Err(mismatch());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edit = rules::build_edit(stream, site, &mut rng).ok_or_else(mismatch)?;
    let start = stream.tokens[edit.tokens.start].byte_start;
    let end = stream.tokens[edit.tokens.end - 1].byte_end;
    let id = format!("{}@{}", site.bug_type, start);
    BugRecord::from_splice(id, &stream.source, start..end, &edit.replacement, site.bug_type)
}

/// Re-checks every record invariant from the raw fields.
pub fn verify_record(record: &BugRecord) -> bool {
    let span = record.byte_span();
    let code = &record.buggy_code;
    if span.start > span.end
        || span.end > code.len()
        || !code.is_char_boundary(span.start)
        || !code.is_char_boundary(span.end)
    {
        return false;
    }
    if code[span.clone()] != record.snippet_buggy || record.snippet_buggy == record.snippet_correct {
        return false;
    }
    let spliced = format!(
        "{}{}{}",
        &code[..span.start],
        record.snippet_correct,
        &code[span.end..]
    );
    if spliced != record.correct_code {
        return false;
    }
    let Ok(stream) = lex(code) else { return false };
    let Ok((labels, lines)) = labels_for(&stream, span) else {
        return false;
    };
    labels.contains(&1) && labels == record.token_labels && lines == record.line_labels
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ForgeReport {
    pub records: Vec<BugRecord>,
    pub histogram: BTreeMap<BugType, usize>,
    pub skipped: Vec<SkipEntry>,
}

/// Sites per bug type for one code sample, in `BugType::ALL` order.
pub fn sites_by_type(stream: &TokenStream) -> Vec<(BugType, Vec<MutationSite>)> {
    BugType::ALL
        .iter()
        .map(|&t| (t, find_sites(stream, t)))
        .collect()
}

fn forge_sample(sample: &SampleRecord, index: usize, per_sample: usize, seed: u64) -> Result<Vec<BugRecord>, String> {
    let stream = lex(&sample.code).map_err(|e| format!("lex failed: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);

    let mut pools: Vec<(BugType, Vec<MutationSite>)> = sites_by_type(&stream)
        .into_iter()
        .filter(|(_, s)| !s.is_empty())
        .collect();
    if pools.is_empty() {
        return Err("no mutation sites for any bug type".into());
    }
    pools.shuffle(&mut rng);
    for (_, sites) in &mut pools {
        sites.shuffle(&mut rng);
    }

    let mut out = Vec::new();
    let deepest = pools.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    'rounds: for round in 0..deepest {
        for (_, sites) in &pools {
            if out.len() == per_sample {
                break 'rounds;
            }
            let Some(site) = sites.get(round) else { continue };
            let record_seed: u64 = rng.gen();
            match inject(&stream, site, record_seed) {
                Ok(mut r) if verify_record(&r) => {
                    r.id = format!("{}-{}-{}", sample.id, out.len(), r.bug_type);
                    out.push(r);
                }
                Ok(r) => log::warn!("{}: dropped unverifiable record {}", sample.id, r.id),
                Err(e) => log::warn!("{}: inject failed: {e}", sample.id),
            }
        }
    }
    Ok(out)
}

/// Injects up to `per_sample` bugs into each sample, cycling over bug types
/// that have sites and then over their sites. Samples are processed in
/// parallel with per-sample PRNG streams; output order is sample order.
pub fn generate_corpus(samples: &[SampleRecord], per_sample: usize, seed: u64) -> Result<ForgeReport> {
    if per_sample == 0 {
        return Err(Error::arg("per_sample must be at least 1"));
    }
    let results: Vec<_> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| forge_sample(s, i, per_sample, seed))
        .collect();

    let mut report = ForgeReport::default();
    for (sample, result) in samples.iter().zip(results) {
        match result {
            Ok(records) => {
                for r in &records {
                    *report.histogram.entry(r.bug_type).or_default() += 1;
                }
                report.records.extend(records);
            }
            Err(reason) => report.skipped.push(SkipEntry {
                sample_id: sample.id.clone(),
                reason,
            }),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
