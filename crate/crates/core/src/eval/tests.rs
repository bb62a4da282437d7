use super::*;
use crate::corpus::synth::synthetic_samples;
use crate::forge::generate_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..100 {
        let n = rng.gen_range(2..60);
        // coarse scores force plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6)) / 5.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        match (roc_auc(&scores, &labels), pairwise_auc(&scores, &labels)) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}"),
            (a, b) => assert_eq!(a, b, "case {case}"),
        }
    }
}

#[test]
fn binary_metric_examples() {
    let m = binary_metrics(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false], 0.5).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 0, 2, 0));
    assert_eq!((m.f1, m.auc), (1.0, Some(1.0)));
    let m = binary_metrics(&[0.3; 4], &[true, false, false, true], 0.5).unwrap();
    assert_eq!(m.auc, Some(0.5));
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    assert_eq!(binary_metrics(&[0.7], &[true], 0.5).unwrap().auc, None);
    assert!(binary_metrics(&[0.7], &[true, false], 0.5).is_err());
    assert!(binary_metrics(&[], &[], 0.5).is_err());
}

proptest! {
    #[test]
    fn ratio_identities(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
        let m = BinaryEval::from_counts(tp, fp, tn, fn_);
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        prop_assert_eq!(m.precision, p);
        prop_assert_eq!(m.recall, r);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((m.f1 - f).abs() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent(s in ".{0,40}") {
        let once = normalize_for_match(&s);
        prop_assert_eq!(normalize_for_match(&once), once.clone());
        prop_assert!(once.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
    }

    #[test]
    fn self_match(s in "[ -~]{1,30}") {
        prop_assert!(strict_substring_match(&s, &s));
    }

    #[test]
    fn topk_monotone(seed in 0u64..500) {
        let (maps, truth) = random_lines(seed, 12);
        let mut prev = 0.0;
        for k in 1..10 {
            let h = code_topk(&maps, &truth, k).unwrap();
            prop_assert!(h >= prev);
            prev = h;
        }
    }
}

fn random_lines(seed: u64, n: usize) -> (Vec<BTreeMap<usize, f64>>, Vec<BTreeSet<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..n {
        let lines = rng.gen_range(1..12);
        let m: BTreeMap<usize, f64> = (1..=lines).map(|l| (l, f64::from(rng.gen_range(0..4)) / 3.0)).collect();
        truth.push([rng.gen_range(1..=lines)].into_iter().collect());
        maps.push(m);
    }
    (maps, truth)
}

#[test]
fn topk_matches_sort_and_check() {
    for seed in 0..20 {
        let (maps, truth) = random_lines(seed, 20);
        for k in [1, 3, 5] {
            let mut hits = 0;
            for (m, t) in maps.iter().zip(&truth) {
                // rank = number of lines that beat this one under the tie rule
                let hit = t.iter().any(|&line| {
                    let s = m[&line];
                    let ahead = m.iter().filter(|(&l, &x)| x > s || (x == s && l < line)).count();
                    ahead < k
                });
                hits += usize::from(hit);
            }
            assert_eq!(code_topk(&maps, &truth, k).unwrap(), hits as f64 / 20.0);
        }
    }
}

#[test]
fn topk_examples() {
    let m: BTreeMap<usize, f64> = [(1, 0.9), (2, 0.8), (3, 0.7), (4, 0.1)].into_iter().collect();
    let t: BTreeSet<usize> = [3].into_iter().collect();
    assert_eq!(code_topk(&[m.clone()], &[t.clone()], 1).unwrap(), 0.0);
    assert_eq!(code_topk(&[m.clone()], &[t.clone()], 5).unwrap(), 1.0);
    assert_eq!(code_topk(&[BTreeMap::new()], &[t], 5).unwrap(), 0.0);
    assert!(code_topk(&[m], &[BTreeSet::new()], 1).is_err());
    assert_eq!(topk_chance(&[10, 2, 5], 5), (0.5 + 1.0 + 1.0) / 3.0);
}

#[test]
fn substring_rules() {
    assert_eq!(normalize_for_match("a [ i ] = 0 ;"), "ai0");
    assert_eq!(normalize_for_match(""), "");
    assert!(strict_substring_match("x = a [ i ] ;", "a[i]"));
    // label only after the window of 3 * 4 raw characters
    assert!(!strict_substring_match("q = 1 ; r = 2 ; a[i]", "a[i]"));
    assert!(strict_substring_match("i <= n", "<="));
    assert!(!strict_substring_match("i < n", "<="));
    assert!(!strict_substring_match("", "x"));
}

#[test]
fn window_is_measured_on_raw_text() {
    // the normalized generation would fit, the raw one does not
    let label = "ab";
    assert!(!strict_substring_match("      ab", label));
    assert!(strict_substring_match("    ab", label));
}

fn bench() -> Vec<BugRecord> {
    generate_corpus(&synthetic_samples(12, 2), 3, 4).unwrap().records
}

#[test]
fn oracle_scores_perfectly() {
    let recs = bench();
    for mode in [Mode::Plain, Mode::GivenLocation] {
        let r = evaluate(&OracleDebugger, &recs, mode).unwrap();
        let o = &r.overall;
        for v in [o.token.precision, o.token.recall, o.token.f1, o.line.f1, o.top1, o.top5, o.type_accuracy, o.correction_accuracy] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(o.token.auc, Some(1.0));
        assert_eq!(o.line.auc, Some(1.0));
    }
}

#[test]
fn constant_model_is_chance() {
    let recs = bench();
    let r = evaluate(&ConstantDebugger(0.5), &recs, Mode::Plain).unwrap();
    assert_eq!(r.overall.token.auc, Some(0.5));
    assert_eq!(r.overall.correction_accuracy, 0.0);
}

#[test]
fn per_type_counts_sum_to_overall() {
    let recs = bench();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let results: Vec<SampleResult> = recs
        .iter()
        .map(|r| {
            let mut s = evaluate_one(&OracleDebugger, r, Mode::Plain).unwrap();
            for p in &mut s.token_probs {
                *p = rng.gen();
            }
            s
        })
        .collect();
    let report = report_from_results(Mode::Plain, results).unwrap();
    let sum = |f: fn(&BinaryEval) -> u64| report.per_bug_type.values().map(|m| f(&m.token)).sum::<u64>();
    assert_eq!(sum(|b| b.tp), report.overall.token.tp);
    assert_eq!(sum(|b| b.fp), report.overall.token.fp);
    assert_eq!(sum(|b| b.tn), report.overall.token.tn);
    assert_eq!(sum(|b| b.fn_), report.overall.token.fn_);
    assert_eq!(report.per_bug_type.values().map(|m| m.samples).sum::<usize>(), recs.len());
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 2 + report.per_bug_type.len());
    assert!(report.to_text().contains("top-5"));
}

#[test]
fn span_prediction_and_splice() {
    assert_eq!(predicted_span(&[0.1, 0.6, 0.9, 0.7, 0.2, 0.8]), Some(1..4));
    assert_eq!(predicted_span(&[0.1, 0.3, 0.2]), Some(1..2));
    assert_eq!(predicted_span(&[]), None);
    let ts = lex("x = a[i + 1];").unwrap();
    assert_eq!(splice_correction(&ts, 4..7, "i").unwrap(), "x = a[i];");
    assert!(splice_correction(&ts, 4..4, "i").is_err());
}
