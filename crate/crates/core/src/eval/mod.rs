//! Token, line and code-wise localization metrics and correction accuracy.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    binary_metrics, code_topk, normalize_for_match, roc_auc, strict_substring_match, top_lines, topk_chance,
    BinaryEval,
};

use crate::error::{Error, Result};
use crate::forge::{verify_record, BugRecord, BugType};
use crate::lex::{lex, TokenStream};
use crate::model::{line_scores, Model};
use crate::tensor::Real;

/// Whether the ground-truth bug span is marked in the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Plain,
    GivenLocation,
}

/// What a debugger reports for one buggy program.
#[derive(Debug, Clone, PartialEq)]
pub struct DebugOutput {
    pub token_probs: Vec<f64>,
    pub type_probs: Vec<f64>,
    pub generated: String,
}

/// Anything that can be scored by [`evaluate`].
pub trait Debugger: Sync {
    /// `location` is the token interval of the buggy snippet in given-location
    /// mode; `max_len` caps the generated token count.
    fn debug(&self, record: &BugRecord, stream: &TokenStream, location: Option<Range<usize>>, max_len: usize)
        -> Result<DebugOutput>;
}

impl<T: Real> Debugger for Model<T> {
    fn debug(
        &self,
        record: &BugRecord,
        stream: &TokenStream,
        location: Option<Range<usize>>,
        max_len: usize,
    ) -> Result<DebugOutput> {
        if self.vocab.len() != self.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the model expects {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        let ids: Vec<usize> = stream.texts().map(|t| self.vocab.id(t)).collect();
        debug_assert_eq!(ids.len(), record.token_labels.len());
        let p = self.predict(&ids, location, max_len)?;
        let f = |x: &T| x.to_f64().unwrap_or(f64::NAN);
        Ok(DebugOutput {
            token_probs: p.token_bug_probs.iter().map(f).collect(),
            type_probs: p.type_probs.iter().map(f).collect(),
            generated: self.vocab.decode(&p.generated),
        })
    }
}

/// Answers with the ground truth.
pub struct OracleDebugger;

impl Debugger for OracleDebugger {
    fn debug(&self, record: &BugRecord, _: &TokenStream, _: Option<Range<usize>>, _: usize) -> Result<DebugOutput> {
        let mut type_probs = vec![0.0; BugType::COUNT];
        type_probs[record.bug_type.index()] = 1.0;
        Ok(DebugOutput {
            token_probs: record.token_labels.iter().map(|&l| f64::from(l)).collect(),
            type_probs,
            generated: record.snippet_correct.clone(),
        })
    }
}

/// Scores every token the same and generates nothing.
pub struct ConstantDebugger(pub f64);

impl Debugger for ConstantDebugger {
    fn debug(&self, _: &BugRecord, stream: &TokenStream, _: Option<Range<usize>>, _: usize) -> Result<DebugOutput> {
        Ok(DebugOutput {
            token_probs: vec![self.0; stream.n_tokens()],
            type_probs: vec![1.0 / BugType::COUNT as f64; BugType::COUNT],
            generated: String::new(),
        })
    }
}

/// Raw per-sample outputs, enough to recompute every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub bug_type: BugType,
    pub token_probs: Vec<f64>,
    pub token_labels: Vec<u8>,
    pub line_scores: BTreeMap<usize, f64>,
    pub true_lines: BTreeSet<usize>,
    pub predicted_type: BugType,
    pub generated: String,
    pub label_snippet: String,
    pub corrected: bool,
}

/// Metrics over one group of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub token: BinaryEval,
    pub line: BinaryEval,
    pub top1: f64,
    pub top5: f64,
    /// Random-ranking expectation of `top5`.
    pub top5_chance: f64,
    pub type_accuracy: f64,
    pub correction_accuracy: f64,
}

pub const THRESHOLD: f64 = 0.5;

impl Metrics {
    pub fn from_samples(samples: &[&SampleResult]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::arg("metrics over no samples"));
        }
        let mut tok_s = Vec::new();
        let mut tok_l = Vec::new();
        let mut line_s = Vec::new();
        let mut line_l = Vec::new();
        for s in samples {
            tok_s.extend_from_slice(&s.token_probs);
            tok_l.extend(s.token_labels.iter().map(|&l| l == 1));
            for (line, &score) in &s.line_scores {
                line_s.push(score);
                line_l.push(s.true_lines.contains(line));
            }
        }
        let maps: Vec<_> = samples.iter().map(|s| s.line_scores.clone()).collect();
        let truth: Vec<_> = samples.iter().map(|s| s.true_lines.clone()).collect();
        let counts: Vec<usize> = samples.iter().map(|s| s.line_scores.len()).collect();
        let n = samples.len() as f64;
        Ok(Metrics {
            samples: samples.len(),
            token: binary_metrics(&tok_s, &tok_l, THRESHOLD)?,
            line: binary_metrics(&line_s, &line_l, THRESHOLD)?,
            top1: code_topk(&maps, &truth, 1)?,
            top5: code_topk(&maps, &truth, 5)?,
            top5_chance: topk_chance(&counts, 5),
            type_accuracy: samples.iter().filter(|s| s.predicted_type == s.bug_type).count() as f64 / n,
            correction_accuracy: samples.iter().filter(|s| s.corrected).count() as f64 / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub overall: Metrics,
    pub per_bug_type: BTreeMap<BugType, Metrics>,
    pub results: Vec<SampleResult>,
}

/// Token interval covered by the label-1 tokens.
pub fn label_span(labels: &[u8]) -> Option<Range<usize>> {
    let first = labels.iter().position(|&l| l == 1)?;
    let last = labels.iter().rposition(|&l| l == 1)?;
    Some(first..last + 1)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Scores one record.
pub fn evaluate_one(debugger: &dyn Debugger, record: &BugRecord, mode: Mode) -> Result<SampleResult> {
    if !verify_record(record) {
        return Err(Error::Data(format!("record {} fails verification", record.id)));
    }
    let stream = lex(&record.buggy_code)?;
    let label_len = lex(&record.snippet_correct)?.n_tokens().max(1);
    let location = match mode {
        Mode::Plain => None,
        Mode::GivenLocation => Some(
            label_span(&record.token_labels)
                .ok_or_else(|| Error::Data(format!("record {} has no buggy token", record.id)))?,
        ),
    };
    let out = debugger.debug(record, &stream, location, 3 * label_len)?;
    if out.token_probs.len() != stream.n_tokens() || out.type_probs.len() != BugType::COUNT {
        return Err(Error::Data(format!(
            "debugger returned {} token and {} type probabilities for {}",
            out.token_probs.len(),
            out.type_probs.len(),
            record.id
        )));
    }
    Ok(SampleResult {
        id: record.id.clone(),
        bug_type: record.bug_type,
        line_scores: line_scores(&out.token_probs, &stream)?,
        true_lines: record.line_labels.iter().copied().collect(),
        token_labels: record.token_labels.clone(),
        predicted_type: BugType::from_index(argmax(&out.type_probs)).expect("eight classes"),
        corrected: strict_substring_match(&out.generated, &record.snippet_correct),
        token_probs: out.token_probs,
        generated: out.generated,
        label_snippet: record.snippet_correct.clone(),
    })
}

/// Aggregates already-computed sample results.
pub fn report_from_results(mode: Mode, results: Vec<SampleResult>) -> Result<MetricsReport> {
    let all: Vec<&SampleResult> = results.iter().collect();
    let overall = Metrics::from_samples(&all)?;
    let mut per_bug_type = BTreeMap::new();
    for t in BugType::ALL {
        let group: Vec<&SampleResult> = results.iter().filter(|r| r.bug_type == t).collect();
        if !group.is_empty() {
            per_bug_type.insert(t, Metrics::from_samples(&group)?);
        }
    }
    Ok(MetricsReport {
        mode,
        overall,
        per_bug_type,
        results,
    })
}

/// Runs `debugger` over every record; samples run in parallel, results keep
/// record order.
pub fn evaluate(debugger: &dyn Debugger, records: &[BugRecord], mode: Mode) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Data("benchmark is empty".into()));
    }
    let results = records
        .par_iter()
        .map(|r| evaluate_one(debugger, r, mode))
        .collect::<Result<Vec<_>>>()?;
    report_from_results(mode, results)
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

pub const CSV_HEADER: &str = "group,samples,token_precision,token_recall,token_f1,token_auc,line_precision,line_recall,line_f1,line_auc,top1,top5,top5_chance,type_accuracy,correction_accuracy";

fn csv_row(group: &str, m: &Metrics) -> String {
    let auc = |a: Option<f64>| a.map_or(String::new(), |x| x.to_string());
    format!(
        "{group},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.samples,
        m.token.precision,
        m.token.recall,
        m.token.f1,
        auc(m.token.auc),
        m.line.precision,
        m.line.recall,
        m.line.f1,
        auc(m.line.auc),
        m.top1,
        m.top5,
        m.top5_chance,
        m.type_accuracy,
        m.correction_accuracy
    )
}

impl MetricsReport {
    /// One row per bug type plus an `ALL` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        out += &csv_row("ALL", &self.overall);
        out.push('\n');
        for (t, m) in &self.per_bug_type {
            out += &csv_row(t.as_str(), m);
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let o = &self.overall;
        let _ = writeln!(out, "mode: {:?}, samples: {}", self.mode, o.samples);
        let _ = writeln!(out, "token-wise (micro): P {:.4}  R {:.4}  F1 {:.4}  AUC {}", o.token.precision, o.token.recall, o.token.f1, fmt_auc(o.token.auc));
        let _ = writeln!(out, "line-wise  (micro): P {:.4}  R {:.4}  F1 {:.4}  AUC {}", o.line.precision, o.line.recall, o.line.f1, fmt_auc(o.line.auc));
        let _ = writeln!(out, "code-wise: top-1 {:.4}  top-5 {:.4} (chance {:.4})", o.top1, o.top5, o.top5_chance);
        let _ = writeln!(out, "bug type accuracy: {:.4}", o.type_accuracy);
        let _ = writeln!(out, "correction accuracy: {:.4}", o.correction_accuracy);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6} {:>5} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}", "type", "n", "tok_f1", "tok_auc", "line_f1", "top1", "top5", "corr");
        for (t, m) in &self.per_bug_type {
            let _ = writeln!(
                out,
                "{:<6} {:>5} {:>8.4} {:>8} {:>8.4} {:>7.4} {:>7.4} {:>7.4}",
                t.as_str(),
                m.samples,
                m.token.f1,
                fmt_auc(m.token.auc),
                m.line.f1,
                m.top1,
                m.top5,
                m.correction_accuracy
            );
        }
        out
    }
}

/// The highest-probability token and its neighbours above the threshold.
pub fn predicted_span(probs: &[f64]) -> Option<Range<usize>> {
    if probs.is_empty() {
        return None;
    }
    let peak = argmax(probs);
    let mut start = peak;
    while start > 0 && probs[start - 1] >= THRESHOLD {
        start -= 1;
    }
    let mut end = peak + 1;
    while end < probs.len() && probs[end] >= THRESHOLD {
        end += 1;
    }
    Some(start..end)
}

/// Replaces the bytes of tokens `span` in `stream` with `snippet`.
pub fn splice_correction(stream: &TokenStream, span: Range<usize>, snippet: &str) -> Result<String> {
    if span.is_empty() || span.end > stream.n_tokens() {
        return Err(Error::arg(format!("token span {span:?} outside {} tokens", stream.n_tokens())));
    }
    let a = stream.tokens[span.start].byte_start;
    let b = stream.tokens[span.end - 1].byte_end;
    Ok(format!("{}{}{}", &stream.source[..a], snippet, &stream.source[b..]))
}

#[cfg(test)]
mod tests;
