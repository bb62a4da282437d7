use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SampleRecord;

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Rouge-L F-measure over whitespace-delimited tokens.
pub fn rouge_l(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    rouge_tokens(&ta, &tb)
}

fn rouge_tokens(ta: &[&str], tb: &[&str]) -> f64 {
    let lcs = lcs_len(ta, tb) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / tb.len() as f64;
    let r = lcs / ta.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    pub score: f64,
    pub benchmark_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub threshold: f64,
    pub removed: Vec<Removal>,
}

/// Removes every sample whose best Rouge-L against the benchmark is strictly
/// above `threshold`. Ties on the best score report the lowest index.
pub fn dedup(
    corpus: Vec<SampleRecord>,
    benchmark: &[String],
    threshold: f64,
) -> (Vec<SampleRecord>, DedupReport) {
    let mut report = DedupReport {
        threshold,
        removed: Vec::new(),
    };
    if benchmark.is_empty() {
        return (corpus, report);
    }
    let bench: Vec<Vec<&str>> = benchmark.iter().map(|b| b.split_whitespace().collect()).collect();
    let best: Vec<(f64, usize)> = corpus
        .par_iter()
        .map(|s| {
            let toks: Vec<&str> = s.code.split_whitespace().collect();
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, b) in bench.iter().enumerate() {
                let score = rouge_tokens(&toks, b);
                if score > best.0 {
                    best = (score, i);
                }
            }
            best
        })
        .collect();
    let mut kept = Vec::with_capacity(corpus.len());
    for (sample, (score, idx)) in corpus.into_iter().zip(best) {
        if score > threshold {
            report.removed.push(Removal {
                id: sample.id,
                score,
                benchmark_index: idx,
            });
        } else {
            kept.push(sample);
        }
    }
    (kept, report)
}
