use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts at a threshold plus rank-based ROC-AUC.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinaryEval {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when one class is empty.
    pub auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl BinaryEval {
    /// Derives the ratios from confusion counts; AUC is left to the caller.
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BinaryEval {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            auc: None,
        }
    }
}

/// Mann-Whitney AUC with average ranks for tied scores.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn binary_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<BinaryEval> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::arg("binary metrics over no predictions"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(BinaryEval {
        auc: roc_auc(scores, labels),
        ..BinaryEval::from_counts(tp, fp, tn, fn_)
    })
}

/// The `k` best lines of one sample, highest score first and smaller line
/// number on ties.
pub fn top_lines(scores: &BTreeMap<usize, f64>, k: usize) -> Vec<usize> {
    let mut lines: Vec<(usize, f64)> = scores.iter().map(|(&l, &s)| (l, s)).collect();
    lines.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    lines.into_iter().take(k).map(|(l, _)| l).collect()
}

/// Fraction of samples whose top-`k` lines include a buggy line.
pub fn code_topk(scores: &[BTreeMap<usize, f64>], truth: &[BTreeSet<usize>], k: usize) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::arg(format!("{} score maps for {} samples", scores.len(), truth.len())));
    }
    if scores.is_empty() {
        return Err(Error::arg("top-k over no samples"));
    }
    if let Some(i) = truth.iter().position(BTreeSet::is_empty) {
        return Err(Error::arg(format!("sample {i} has no buggy line")));
    }
    let hits = scores
        .iter()
        .zip(truth)
        .filter(|(s, t)| top_lines(s, k).iter().any(|l| t.contains(l)))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Expected top-`k` hit rate of random line ranking with one buggy line.
pub fn topk_chance(line_counts: &[usize], k: usize) -> f64 {
    if line_counts.is_empty() {
        return 0.0;
    }
    let total: f64 = line_counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { (k as f64 / n as f64).min(1.0) })
        .sum();
    total / line_counts.len() as f64
}

/// Keeps only ASCII letters, digits and underscores.
pub fn normalize_for_match(text: &str) -> String {
    text.chars().filter(|c| c.is_ascii_alphanumeric() || *c == '_').collect()
}

/// Whether the normalized label occurs in the normalized generation, after
/// cutting the raw generation to three times the label's length.
///
/// A label made only of punctuation (`<`, `;`) would normalize to the empty
/// string and match anything, so such labels are compared with only
/// whitespace removed.
pub fn strict_substring_match(generated: &str, label: &str) -> bool {
    let window = 3 * label.chars().count();
    let cut: String = generated.chars().take(window).collect();
    let needle = normalize_for_match(label);
    if needle.is_empty() {
        let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        let needle = squash(label);
        return !needle.is_empty() && squash(&cut).contains(&needle);
    }
    normalize_for_match(&cut).contains(&needle)
}
