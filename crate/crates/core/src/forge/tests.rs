use super::*;
use crate::corpus::Origin;
use proptest::prelude::*;

const KERNEL: &str = r#"#define N 16
void kernel(int in[16], int out[16], unsigned int key, long *wide) {
#pragma HLS INTERFACE m_axi port=in
  int acc = 1;
  int sum = 0;
  int buf[32];
  unsigned int mask = key;
  for (int i = 0; i < 16; i++) {
#pragma HLS PIPELINE II=1
    buf[i] = in[i];
    buf[i + 16 / 2] = in[i] << 2;
  }
  for (int j = 0; j < 16; j += 4) {
    out[j + 0] = buf[j + 0] * acc;
    out[j + 1] = buf[j + 1] * acc;
    out[j + 2] = buf[j + 2] * acc;
    out[j + 3] = buf[j + 3] * acc;
  }
  *wide = mask << 3;
  sum = sum + buf[0];
  out[0] = sum;
}
"#;

fn stream(code: &str) -> TokenStream {
    lex(code).unwrap()
}

fn sample(id: &str, code: &str) -> SampleRecord {
    SampleRecord {
        id: id.into(),
        code: code.into(),
        origin: Origin::Synthetic,
    }
}

fn site_text(ts: &TokenStream, s: &MutationSite) -> String {
    let a = ts.tokens[s.token_span.start].byte_start;
    let b = ts.tokens[s.token_span.end - 1].byte_end;
    ts.source[a..b].to_string()
}

/// Applies `inject` over many seeds and collects the distinct buggy snippets.
fn variants(ts: &TokenStream, site: &MutationSite) -> Vec<String> {
    let mut v: Vec<String> = (0..64)
        .map(|s| inject(ts, site, s).unwrap().snippet_buggy)
        .collect();
    v.sort();
    v.dedup();
    v
}

#[test]
fn bug_type_names() {
    assert_eq!(BugType::ALL.len(), BugType::COUNT);
    for (i, t) in BugType::ALL.into_iter().enumerate() {
        assert_eq!(t.index(), i);
        assert_eq!(BugType::from_index(i), Some(t));
        assert_eq!(t.as_str().parse::<BugType>().unwrap(), t);
        assert_eq!(serde_json::to_value(t).unwrap(), t.as_str());
    }
    assert!("XYZ".parse::<BugType>().is_err());
}

#[test]
fn oob_site_and_labels() {
    let ts = stream("int a[8];\nvoid f() {\n  for (i = 0; i < 8; i++) a[i] = 0;\n}\n");
    let sites = find_sites(&ts, BugType::Oob);
    assert_eq!(sites.len(), 1);
    assert_eq!(site_text(&ts, &sites[0]), "i < 8");
    assert_eq!(sites[0].context, SiteContext::LoopBound);
    assert_eq!(variants(&ts, &sites[0]), ["i < 9", "i <= 8"]);

    let r = (0..64)
        .map(|s| inject(&ts, &sites[0], s).unwrap())
        .find(|r| r.snippet_buggy == "i <= 8")
        .unwrap();
    let buggy = lex(&r.buggy_code).unwrap();
    let marked: Vec<&str> = r.buggy_tokens().map(|i| buggy.tokens[i].text.as_str()).collect();
    assert_eq!(marked, ["i", "<=", "8"]);
    assert_eq!(r.line_labels, [3]);
    assert!(verify_record(&r));
}

#[test]
fn oob_needs_matching_array() {
    let ts = stream("int a[8];\nvoid f() { for (i = 0; i < 4; i++) a[i] = 0; }\n");
    assert!(find_sites(&ts, BugType::Oob).is_empty());
    let ts = stream("int a[8];\nvoid f() { for (i = 0; i < N; i++) b[i] = 0; }\n");
    assert!(find_sites(&ts, BugType::Oob).is_empty());
    let ts = stream("int a[N];\nvoid f() { for (i = 0; i < N; i++) a[i] = 0; }\n");
    let s = find_sites(&ts, BugType::Oob);
    assert_eq!(variants(&ts, &s[0]), ["i < N + 1", "i <= N"]);
}

#[test]
fn init_sites() {
    assert!(find_sites(&stream("void f() { int x; y = x; }"), BugType::Init).is_empty());
    let ts = stream("void f() {\n  int x = 0;\n  y = x + 1;\n}\n");
    let s = find_sites(&ts, BugType::Init);
    assert_eq!(s.len(), 1);
    let r = inject(&ts, &s[0], 0).unwrap();
    assert_eq!(r.snippet_correct, "int x = 0;");
    assert_eq!(r.snippet_buggy, "int x;");
    assert!(verify_record(&r));
    // Written before it is read: removing the initializer is harmless.
    let ts = stream("void f() {\n  int x = 0;\n  x = 5;\n  y = x;\n}\n");
    assert!(find_sites(&ts, BugType::Init).is_empty());
}

#[test]
fn zero_site() {
    let ts = stream("void f() { int acc = 1; }");
    let s = find_sites(&ts, BugType::Zero);
    assert_eq!(s.len(), 1);
    assert_eq!(site_text(&ts, &s[0]), "1");
    let r = inject(&ts, &s[0], 3).unwrap();
    assert_eq!(r.buggy_code, "void f() { int acc = 0; }");
    assert_eq!((r.snippet_correct.as_str(), r.snippet_buggy.as_str()), ("1", "0"));
    assert!(find_sites(&stream("void f() { int acc = 0; }"), BugType::Zero).is_empty());
    assert!(find_sites(&stream("const int k = 3;"), BugType::Zero).is_empty());
}

#[test]
fn shift_amount_exceeds_width() {
    let ts = stream("void f(int x) { int y; y = x << 2; }");
    let s = find_sites(&ts, BugType::Shft);
    assert_eq!(s.len(), 1);
    assert_eq!(site_text(&ts, &s[0]), "2");
    let v = variants(&ts, &s[0]);
    let amounts: Vec<u32> = v.iter().map(|t| t.parse().unwrap()).collect();
    assert!(amounts.iter().all(|a| (33..=40).contains(a)), "{amounts:?}");
    assert!(amounts.contains(&34));
    let r = (0..64)
        .map(|seed| inject(&ts, &s[0], seed).unwrap())
        .find(|r| r.snippet_buggy == "34")
        .unwrap();
    assert_eq!(r.buggy_code, "void f(int x) { int y; y = x << 34; }");

    let ts = stream("void f(long x) { long y; y = x << 2; }");
    let s = find_sites(&ts, BugType::Shft);
    let amounts: Vec<u32> = variants(&ts, &s[0]).iter().map(|t| t.parse().unwrap()).collect();
    assert!(amounts.iter().all(|a| (65..=72).contains(a)), "{amounts:?}");
}

#[test]
fn loop_condition_variants() {
    let ts = stream("void f() { for (int i = 0; i < n; i++) { a[i] = 0; } }");
    let s = find_sites(&ts, BugType::Inf);
    assert_eq!(s.len(), 1);
    assert_eq!(variants(&ts, &s[0]), [";", ">"]);
    let r = (0..64).map(|seed| inject(&ts, &s[0], seed).unwrap()).find(|r| r.snippet_buggy == ";").unwrap();
    assert_eq!(r.snippet_correct, "; i++");
    assert!(r.buggy_code.contains("for (int i = 0; i < n;)"));
    for seed in 0..16 {
        assert!(verify_record(&inject(&ts, &s[0], seed).unwrap()));
    }
    let ts = stream("void f() { while (k < 10) { k++; } }");
    assert_eq!(find_sites(&ts, BugType::Inf).len(), 1);
}

#[test]
fn unsigned_decl() {
    let ts = stream("void f(long *o) { unsigned int m = 7; *o = m << 3; }");
    let s = find_sites(&ts, BugType::Use);
    assert_eq!(s.len(), 1);
    let r = inject(&ts, &s[0], 0).unwrap();
    assert_eq!(r.snippet_correct, "unsigned int");
    assert_eq!(r.snippet_buggy, "int");
    assert!(find_sites(&stream("void f() { unsigned int m = 7; g(m); }"), BugType::Use).is_empty());
}

#[test]
fn unrolled_statements() {
    let code = "void f() {\n  a[i + 0] = b[i + 0];\n  a[i + 1] = b[i + 1];\n  a[i + 2] = b[i + 2];\n}\n";
    let ts = stream(code);
    let s = find_sites(&ts, BugType::Mlu);
    assert!(!s.is_empty());
    for site in &s {
        for seed in 0..8 {
            let r = inject(&ts, site, seed).unwrap();
            assert!(verify_record(&r));
            assert_eq!(r.snippet_correct.lines().count(), 1);
        }
    }
    let r = inject(&ts, &s[s.len() - 1], 0).unwrap();
    assert!(r.snippet_buggy.contains("i + 1"), "{}", r.snippet_buggy);
}

#[test]
fn half_buffer() {
    let ts = stream("void f() { for (i = 0; i < n; i++) { o[i] = buf[i + HALF]; p[i] = buf[i]; } }");
    let s = find_sites(&ts, BugType::Buf);
    let ctx: Vec<SiteContext> = s.iter().map(|s| s.context).collect();
    assert!(ctx.contains(&SiteContext::HalfOffset));
    assert!(ctx.contains(&SiteContext::MissingHalfOffset));
    for site in &s {
        let r = inject(&ts, site, 0).unwrap();
        assert!(verify_record(&r));
        match site.context {
            SiteContext::HalfOffset => assert_eq!(r.snippet_buggy, "i"),
            _ => assert_eq!(r.snippet_buggy, "i + HALF"),
        }
    }
    let ts = stream("void f() { o[i] = buf[i + N / 2]; }");
    assert!(!find_sites(&ts, BugType::Buf).is_empty());
}

#[test]
fn kernel_has_every_type() {
    let ts = stream(KERNEL);
    for (t, sites) in sites_by_type(&ts) {
        assert!(!sites.is_empty(), "no {t} site in the reference kernel");
        for s in &sites {
            assert_eq!(s.bug_type, t);
            assert!(!s.token_span.is_empty());
            for seed in [0, 1, 99] {
                let r = inject(&ts, s, seed).unwrap();
                assert!(verify_record(&r), "{t} at {}", site_text(&ts, s));
                assert_ne!(r.buggy_code, r.correct_code);
            }
        }
    }
}

#[test]
fn inject_rejects_foreign_sites() {
    let ts = stream("void f() { int acc = 1; }");
    let other = stream("void f() { int acc = 1; int b = 2; }");
    let s = find_sites(&other, BugType::Zero).pop().unwrap();
    assert!(matches!(inject(&ts, &s, 0), Err(Error::Argument(_))));
    let fake = MutationSite {
        bug_type: BugType::Oob,
        token_span: 0..1,
        context: SiteContext::LoopBound,
    };
    assert!(inject(&ts, &fake, 0).is_err());
}

#[test]
fn verify_rejects_tampering() {
    let ts = stream(KERNEL);
    let s = find_sites(&ts, BugType::Zero).remove(0);
    let good = inject(&ts, &s, 0).unwrap();
    assert!(verify_record(&good));

    let mut r = good.clone();
    r.snippet_buggy = r.snippet_correct.clone();
    assert!(!verify_record(&r));

    let mut r = good.clone();
    r.token_labels.rotate_right(1);
    assert!(!verify_record(&r));

    let mut r = good.clone();
    r.line_labels.push(1);
    assert!(!verify_record(&r));

    let mut r = good.clone();
    r.correct_code.push(' ');
    assert!(!verify_record(&r));

    let mut r = good;
    r.buggy_byte_span.1 += 1000;
    assert!(!verify_record(&r));
}

#[test]
fn corpus_bounded_by_sites() {
    let report = generate_corpus(&[sample("z", "void f() { int acc = 1; }")], 3, 5).unwrap();
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.histogram.get(&BugType::Zero), Some(&1));
    assert_eq!(report.records[0].id, "z-0-ZERO");

    let report = generate_corpus(&[sample("none", "void f() { g(); }")], 3, 5).unwrap();
    assert!(report.records.is_empty());
    assert_eq!(report.skipped.len(), 1);
    assert!(generate_corpus(&[], 0, 0).is_err());
}

#[test]
fn corpus_is_deterministic() {
    let samples: Vec<SampleRecord> = (0..6).map(|i| sample(&format!("s{i}"), KERNEL)).collect();
    let a = generate_corpus(&samples, 5, 11).unwrap();
    let b = generate_corpus(&samples, 5, 11).unwrap();
    assert_eq!(
        serde_json::to_string(&a.records).unwrap(),
        serde_json::to_string(&b.records).unwrap()
    );
    assert_eq!(a.records.len(), 30);
    // Per-sample streams differ, so identical samples get different bugs.
    assert_ne!(a.records[0..5], a.records[5..10]);
}

/// Per sample: round-robin over non-empty types means type t receives
/// `min(sites_t, k)` records where k is the number of full rounds plus the
/// partial round; the total is `min(per_sample, total_sites)`.
#[test]
fn histogram_matches_enumeration() {
    let codes = [
        "void f() { int acc = 1; int b = 2; }",
        "void f(int x) { int y = 0; y = x << 2; z = y; }",
        "int a[8];\nvoid f() { for (i = 0; i < 8; i++) a[i] = 0; }",
        KERNEL,
    ];
    let samples: Vec<SampleRecord> = codes.iter().enumerate().map(|(i, c)| sample(&i.to_string(), c)).collect();
    let per_sample = 4;
    let report = generate_corpus(&samples, per_sample, 3).unwrap();

    let mut total = 0;
    for s in &samples {
        let ts = stream(&s.code);
        let counts: Vec<usize> = BugType::ALL.iter().map(|&t| find_sites(&ts, t).len()).collect();
        let avail: usize = counts.iter().sum();
        let expect = avail.min(per_sample);
        total += expect;
        let got: Vec<&BugRecord> = report.records.iter().filter(|r| r.id.starts_with(&format!("{}-", s.id))).collect();
        assert_eq!(got.len(), expect, "sample {}", s.id);
        // No type gets two records before every type with sites has one.
        let types_with_sites = counts.iter().filter(|&&c| c > 0).count();
        let mut per_type = BTreeMap::new();
        for r in &got {
            *per_type.entry(r.bug_type).or_insert(0usize) += 1;
        }
        if got.len() <= types_with_sites {
            assert!(per_type.values().all(|&c| c == 1));
        }
    }
    assert_eq!(report.records.len(), total);
    assert_eq!(report.histogram.values().sum::<usize>(), total);
    for t in BugType::ALL {
        let n = report.records.iter().filter(|r| r.bug_type == t).count();
        assert_eq!(report.histogram.get(&t).copied().unwrap_or(0), n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_and_type_fidelity(seed: u64, per_sample in 1usize..6) {
        let report = generate_corpus(&[sample("k", KERNEL)], per_sample, seed).unwrap();
        for r in &report.records {
            prop_assert!(verify_record(r));
            let span = r.byte_span();
            let spliced = format!("{}{}{}", &r.buggy_code[..span.start], r.snippet_correct, &r.buggy_code[span.end..]);
            prop_assert_eq!(&spliced, &r.correct_code);
            // The correct snippet starts at a site of the same type.
            let ts = stream(&r.correct_code);
            let hit = find_sites(&ts, r.bug_type).iter().any(|s| {
                let a = ts.tokens[s.token_span.start].byte_start;
                let b = ts.tokens[s.token_span.end - 1].byte_end;
                a < span.start + r.snippet_correct.len() && span.start < b.max(a + 1)
            });
            prop_assert!(hit);
        }
    }
}
