//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test --release --test acceptance`, or pick
//! criteria by number: `cargo test --test acceptance -- 4 8`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{gradcheck, random_tensor, rel_err, rng, weighted_sum};
use hlsdbg::corpus::synth::synthetic_samples;
use hlsdbg::corpus::{dedup, rouge_l, split_by_group, Origin, SampleRecord};
use hlsdbg::eval::{
    code_topk, evaluate, roc_auc, ConstantDebugger, MetricsReport, Mode, OracleDebugger,
};
use hlsdbg::forge::{generate_corpus, verify_record, BugRecord, BugType};
use hlsdbg::lex::lex;
use hlsdbg::model::{Model, ModelConfig};
use hlsdbg::tensor::{Tape, Var};
use hlsdbg::train::{
    batch_loss, build_vocab, loss_all, loss_all_var, loss_bug, loss_decoder, loss_type, prepare, train, Batch,
    Example, LossWeights, Output, TrainFile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure!(took < limit, "took {took:.1?}, limit {limit:?}");
    Ok(took)
}

// 1 ---------------------------------------------------------------------

fn injector_round_trip() -> Outcome {
    let start = Instant::now();
    let report = generate_corpus(&synthetic_samples(300, 101), 4, 101).map_err(|e| e.to_string())?;
    let recs = &report.records;
    ensure!(recs.len() >= 1000, "only {} records", recs.len());
    let types: BTreeSet<BugType> = recs.iter().map(|r| r.bug_type).collect();
    ensure!(types.len() == 8, "types present: {types:?}");
    for r in recs {
        ensure!(verify_record(r), "{} fails verify_record", r.id);
        let span = r.byte_span();
        let back = format!("{}{}{}", &r.buggy_code[..span.start], r.snippet_correct, &r.buggy_code[span.end..]);
        ensure!(back == r.correct_code, "{}: splice-back differs", r.id);
        let ts = lex(&r.buggy_code).map_err(|e| e.to_string())?;
        let hit = ts.tokens_in_byte_range(span.clone()).map_err(|e| e.to_string())?;
        // independent overlap oracle
        let oracle: Vec<u8> = ts
            .tokens
            .iter()
            .map(|t| u8::from(t.byte_start < span.end && t.byte_end > span.start))
            .collect();
        let labels: Vec<u8> = (0..ts.n_tokens()).map(|i| u8::from(hit.contains(&i))).collect();
        ensure!(r.token_labels == labels, "{}: labels differ from tokens_in_byte_range", r.id);
        ensure!(r.token_labels == oracle, "{}: labels differ from overlap oracle", r.id);
    }
    let took = within(Duration::from_secs(30), start)?;
    Ok(format!("{} records, 8 types, {took:.1?}", recs.len()))
}

// 2 ---------------------------------------------------------------------

const H: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;

type Prim = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Tape<'_, f64>, &[Var]) -> hlsdbg::Result<Var>>);

fn primitives() -> Vec<Prim> {
    let keep: Vec<bool> = (0..24).map(|i| (i % 4) <= (i / 4) % 3 + (i / 12)).collect();
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y) })),
        ("matmul_batched", vec![vec![2, 3, 4], vec![2, 4, 5]], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y) })),
        ("matmul_nt", vec![vec![2, 3, 4], vec![2, 5, 4]], Box::new(|t, v| { let y = t.matmul_nt(v[0], v[1])?; weighted_sum(t, y) })),
        ("add", vec![vec![3, 4], vec![4]], Box::new(|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y) })),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y) })),
        ("scale", vec![vec![5]], Box::new(|t, v| { let y = t.scale(v[0], -1.7); weighted_sum(t, y) })),
        ("permute", vec![vec![2, 3, 2, 2]], Box::new(|t, v| { let y = t.permute(v[0], &[0, 2, 1, 3])?; weighted_sum(t, y) })),
        ("transpose", vec![vec![2, 3, 4]], Box::new(|t, v| { let y = t.transpose(v[0], 0, 2)?; weighted_sum(t, y) })),
        ("reshape", vec![vec![2, 6]], Box::new(|t, v| { let y = t.reshape(v[0], &[3, 4])?; weighted_sum(t, y) })),
        ("concat", vec![vec![2, 3], vec![2, 2]], Box::new(|t, v| { let y = t.concat(&[v[0], v[1]], 1)?; weighted_sum(t, y) })),
        ("slice", vec![vec![3, 5, 2]], Box::new(|t, v| { let y = t.slice(v[0], 1, 1, 3)?; weighted_sum(t, y) })),
        ("embedding", vec![vec![5, 3]], Box::new(|t, v| { let y = t.embedding(v[0], &[4, 0, 4, 2])?; weighted_sum(t, y) })),
        ("softmax", vec![vec![2, 4, 3]], Box::new(|t, v| { let y = t.softmax(v[0], 1)?; weighted_sum(t, y) })),
        ("layer_norm", vec![vec![4, 6], vec![6], vec![6]], Box::new(|t, v| { let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?; weighted_sum(t, y) })),
        ("gelu", vec![vec![3, 7]], Box::new(|t, v| { let y = t.gelu(v[0]); weighted_sum(t, y) })),
        ("attention_mask", vec![vec![4, 3, 4]], Box::new(move |t, v| { let y = t.attention_mask(v[0], &keep, 0.5, 2)?; let y = t.softmax(y, 2)?; weighted_sum(t, y) })),
        ("sum", vec![vec![3, 4]], Box::new(|t, v| { let y = t.mul(v[0], v[0])?; Ok(t.sum(y)) })),
        ("mean", vec![vec![3, 4]], Box::new(|t, v| { let y = t.mul(v[0], v[0])?; Ok(t.mean(y)) })),
        ("cross_entropy", vec![vec![4, 6]], Box::new(|t, v| t.cross_entropy(v[0], &[5, 0, 2, 2], &[0.25, 0.5, 0.0, 1.0]))),
        ("bce_with_logits", vec![vec![5]], Box::new(|t, v| t.weighted_bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0, 0.0], &[0.05, 1.0, 1.0, 0.05, 0.0]))),
    ]
}

fn short_records(n: usize, seed: u64) -> Vec<BugRecord> {
    let mut recs = generate_corpus(&synthetic_samples(4 * n, seed), 1, seed).unwrap().records;
    recs.sort_by_key(|r| r.buggy_code.len());
    recs.truncate(n);
    recs
}

fn model_gradcheck() -> Result<(f64, usize), String> {
    let recs = short_records(2, 5);
    let vocab = build_vocab(&recs, 1).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        n_layers_enc: 2,
        n_layers_dec: 2,
        max_src_len: 64,
        max_tgt_len: 16,
        dropout: 0.0,
        ..ModelConfig::desk(vocab.len())
    };
    let data = prepare(&recs, &vocab, &config).map_err(|e| e.to_string())?;
    let mut model = Model::<f64>::new(config, vocab, 13).map_err(|e| e.to_string())?;
    let refs: Vec<&Example> = data.iter().collect();
    let batch = Batch::new(&refs, &[false, true]).map_err(|e| e.to_string())?;
    let w = LossWeights::default();

    let grads: Vec<Vec<f64>> = {
        let mut t = Tape::with_params(&model.params);
        let (all, _) = batch_loss(&model, &mut t, &batch, &w, None).map_err(|e| e.to_string())?;
        let g = t.backward(all).map_err(|e| e.to_string())?;
        model
            .params
            .ids()
            .map(|id| g.param(id).map_or_else(|| vec![0.0; model.params.get(id).numel()], <[f64]>::to_vec))
            .collect()
    };
    let loss = |m: &Model<f64>| -> f64 {
        let mut t = Tape::inference(&m.params);
        let (all, _) = batch_loss(m, &mut t, &batch, &w, None).unwrap();
        t.scalar(all)
    };

    let mut r = rng(21);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let g = &grads[id.0];
        let peak = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap_or(0);
        for j in [peak, r.gen_range(0..g.len())] {
            let orig = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = orig + H;
            let up = loss(&model);
            model.params.get_mut(id).data_mut()[j] = orig - H;
            let down = loss(&model);
            model.params.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let e = rel_err(g[j], numeric);
            if e >= GRAD_TOL {
                eprintln!("  {}[{j}]: analytic {} numeric {numeric}", model.params.name(id), g[j]);
            }
            worst = worst.max(e);
            checked += 1;
        }
    }
    Ok((worst, checked))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst_prim = ("", 0.0f64);
    for (name, shapes, f) in primitives() {
        let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(&mut r, s)).collect();
        let err = gradcheck(&inputs, H, |t, v| f(t, v)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(err < GRAD_TOL, "primitive {name}: max relative error {err:e}");
        if err > worst_prim.1 {
            worst_prim = (name, err);
        }
    }
    let (worst_model, checked) = model_gradcheck()?;
    ensure!(worst_model < GRAD_TOL, "2-layer desk model: max relative error {worst_model:e}");
    let took = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "primitives max rel err {:.1e} ({}), 2-layer desk model {worst_model:.1e} over {checked} coordinates, {took:.1?}",
        worst_prim.1, worst_prim.0
    ))
}

// 3 ---------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
    row[k] - m - z.ln()
}

fn loss_fidelity() -> Outcome {
    let w = LossWeights::default();
    ensure!(
        (w.alpha_type, w.alpha_bug, w.alpha_decoder, w.alpha_true, w.alpha_false) == (0.2, 2.0, 10.0, 0.05, 1.0),
        "default weights {w:?}"
    );
    let mut t = Tape::<f64>::new();
    let logits = t.constant([3, 8], vec![0.37; 24]).unwrap();
    let lt = loss_type(&mut t, logits, &[0, 3, 7]).unwrap();
    let uniform = t.scalar(lt);
    ensure!((uniform - 8f64.ln()).abs() < 1e-9, "uniform L_type {uniform}");

    let mut r = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        // bug loss
        let n = r.gen_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-4.0..4.0)).collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.3))).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| r.gen_bool(0.8)).collect();
        mask[0] = true;
        let mut t = Tape::<f64>::new();
        let v = t.constant([n], x.clone()).unwrap();
        let got = loss_bug(&mut t, v, &y, &mask, &w).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let a = if y[i] == 1 { w.alpha_true } else { w.alpha_false };
            let p = sigmoid(x[i]);
            let bce = if y[i] == 1 { -p.ln() } else { -(1.0 - p).ln() };
            num += a * bce;
            den += a;
        }
        worst = worst.max((t.scalar(got) - num / den).abs());

        // decoder loss
        let (b, v_sz) = (r.gen_range(1..4), r.gen_range(3..9));
        let targets: Vec<Vec<usize>> = (0..b).map(|_| (0..r.gen_range(1..6)).map(|_| r.gen_range(0..v_sz)).collect()).collect();
        let k = targets.iter().map(Vec::len).max().unwrap();
        let x: Vec<f64> = (0..b * k * v_sz).map(|_| r.gen_range(-3.0..3.0)).collect();
        let mut t = Tape::<f64>::new();
        let v = t.constant([b * k, v_sz], x.clone()).unwrap();
        let got = loss_decoder(&mut t, v, &targets, k).unwrap();
        let mut oracle = 0.0;
        for (bi, tg) in targets.iter().enumerate() {
            let mut s = 0.0;
            for (j, &id) in tg.iter().enumerate() {
                let row = &x[(bi * k + j) * v_sz..(bi * k + j + 1) * v_sz];
                s -= log_softmax_at(row, id);
            }
            oracle += s / tg.len() as f64;
        }
        worst = worst.max((t.scalar(got) - oracle / b as f64).abs());

        // composition
        let parts = [r.gen_range(0.0..5.0), r.gen_range(0.0..5.0), r.gen_range(0.0..5.0)];
        let expect = 1.0 * (0.2 * parts[0] + 2.0 * parts[1]) + 10.0 * parts[2];
        let direct = loss_all(parts[0], parts[1], parts[2], &w).unwrap();
        let mut t = Tape::<f64>::new();
        let vs: Vec<Var> = parts.iter().map(|&p| t.constant([1], vec![p]).unwrap()).collect();
        let on_tape = loss_all_var(&mut t, vs[0], vs[1], vs[2], &w).unwrap();
        worst = worst.max((direct - expect).abs()).max((t.scalar(on_tape) - expect).abs());
    }
    ensure!(worst < 1e-12, "max deviation from scalar oracles {worst:e}");
    ensure!((loss_all(1.0, 1.0, 1.0, &w).unwrap() - 12.2).abs() < 1e-12, "L_all(1,1,1) != 12.2");
    Ok(format!("L_type(uniform) - ln 8 = {:.1e}, max oracle deviation {worst:.1e}", uniform - 8f64.ln()))
}

// 4 and 8 ---------------------------------------------------------------

struct Overfit {
    model: Model<f32>,
    records: Vec<BugRecord>,
    plain: MetricsReport,
}

fn overfit_records() -> Vec<BugRecord> {
    let mut recs = generate_corpus(&synthetic_samples(32, 1), 1, 1).unwrap().records;
    recs.truncate(32);
    recs
}

fn run_overfit() -> Result<(Overfit, String), String> {
    let file = TrainFile::load(&config_path("overfit.toml")).map_err(|e| e.to_string())?;
    let records = overfit_records();
    ensure!(records.len() == 32, "only {} records", records.len());
    let vocab = build_vocab(&records, file.model.min_freq).map_err(|e| e.to_string())?;
    let config = file.model.resolve(vocab.len()).map_err(|e| e.to_string())?;
    ensure!(
        (config.n_layers_enc, config.n_layers_dec, config.d_model) == (4, 4, 256),
        "not the desk shape: {config:?}"
    );
    let data = prepare(&records, &vocab, &config).map_err(|e| e.to_string())?;

    // bit-for-bit curve reproducibility in f64
    let short = hlsdbg::train::TrainConfig { epochs: 2, ..file.train.clone() };
    let base = Model::<f64>::new(config.clone(), vocab.clone(), file.train.seed).map_err(|e| e.to_string())?;
    let curves: Vec<_> = (0..2)
        .map(|_| {
            let mut m = base.clone();
            train(&mut m, &data, &short, &file.loss, None, &Output::default(), |_, _| false).map(|r| r.curve)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(curves[0] == curves[1], "f64 loss curves differ between identical runs");

    let start = Instant::now();
    let mut model = Model::<f32>::new(config, vocab, file.train.seed).map_err(|e| e.to_string())?;
    let mut hit: Option<(usize, MetricsReport)> = None;
    let mut last = None;
    let report = train(&mut model, &data, &file.train, &file.loss, None, &Output::default(), |epoch, m| {
        if epoch % 5 != 0 {
            return false;
        }
        let r = evaluate(m, &records, Mode::Plain).expect("evaluation");
        let done = r.overall.token.f1 >= 0.95 && r.overall.correction_accuracy >= 0.90;
        eprintln!(
            "  epoch {epoch:>3}: token F1 {:.3}, correction {:.3}",
            r.overall.token.f1, r.overall.correction_accuracy
        );
        if done {
            hit = Some((epoch, r));
        } else {
            last = Some(r);
        }
        done
    })
    .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure!(report.curve.iter().all(|r| r.l_all.is_finite()), "non-finite loss in curve");
    let first = report.curve.first().map(|r| r.l_all).unwrap_or(f64::NAN);
    let end = report.curve.last().map(|r| r.l_all).unwrap_or(f64::NAN);
    let Some((epoch, plain)) = hit else {
        let o = last.map(|r| r.overall);
        return Err(format!(
            "thresholds not reached in 200 epochs: {:?}",
            o.map(|o| (o.token.f1, o.correction_accuracy))
        ));
    };
    ensure!(took < Duration::from_secs(600), "training took {took:.1?}");
    let msg = format!(
        "epoch {epoch}: token F1 {:.3}, correction {:.3}, loss {first:.2} -> {end:.4}, f64 curve reproducible, {took:.1?}",
        plain.overall.token.f1, plain.overall.correction_accuracy
    );
    Ok((Overfit { model, records, plain }, msg))
}

fn given_location(o: &Overfit) -> Outcome {
    let given = evaluate(&o.model, &o.records, Mode::GivenLocation).map_err(|e| e.to_string())?;
    let (g, p) = (given.overall.correction_accuracy, o.plain.overall.correction_accuracy);
    ensure!(g >= p, "given-location correction {g:.3} < plain {p:.3}");
    Ok(format!("correction given-location {g:.3} >= plain {p:.3}"))
}

// 5 ---------------------------------------------------------------------

fn pairwise_auc(s: &[f64], l: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                pairs += 1.0;
                wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn metric_oracles() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = r.gen_range(2..80);
        let s: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.5) { f64::from(r.gen_range(0..5)) } else { r.gen() }).collect();
        let l: Vec<bool> = (0..n).map(|_| r.gen_bool(0.35)).collect();
        match (roc_auc(&s, &l), pairwise_auc(&s, &l)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            (a, b) => return Err(format!("instance {i}: {a:?} vs {b:?}")),
        }
    }
    ensure!(worst < 1e-12, "AUC deviates by {worst:e}");

    for seed in 0..20u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut maps = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..20 {
            let n = r.gen_range(1..15);
            maps.push((1..=n).map(|l| (l, f64::from(r.gen_range(0..5)))).collect::<BTreeMap<usize, f64>>());
            truth.push((0..r.gen_range(1..3)).map(|_| r.gen_range(1..=n)).collect::<BTreeSet<usize>>());
        }
        for k in [1, 5] {
            let hits = maps
                .iter()
                .zip(&truth)
                .filter(|(m, t)| {
                    let mut v: Vec<(usize, f64)> = m.iter().map(|(&a, &b)| (a, b)).collect();
                    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                    v.iter().take(k).any(|(line, _)| t.contains(line))
                })
                .count();
            let got = code_topk(&maps, &truth, k).map_err(|e| e.to_string())?;
            ensure!(got == hits as f64 / 20.0, "top-{k} seed {seed}: {got} vs {hits}/20");
        }
    }

    let bench = generate_corpus(&synthetic_samples(20, 9), 2, 9).unwrap().records;
    let oracle = evaluate(&OracleDebugger, &bench, Mode::Plain).map_err(|e| e.to_string())?.overall;
    let ones = [
        oracle.token.precision,
        oracle.token.recall,
        oracle.token.f1,
        oracle.token.auc.unwrap_or(0.0),
        oracle.line.precision,
        oracle.line.recall,
        oracle.line.f1,
        oracle.line.auc.unwrap_or(0.0),
        oracle.top1,
        oracle.top5,
        oracle.type_accuracy,
        oracle.correction_accuracy,
    ];
    ensure!(ones.iter().all(|&x| x == 1.0), "oracle model metrics {ones:?}");
    let constant = evaluate(&ConstantDebugger(0.5), &bench, Mode::Plain).map_err(|e| e.to_string())?.overall;
    ensure!(constant.token.auc == Some(0.5), "constant model AUC {:?}", constant.token.auc);
    Ok(format!("AUC max deviation {worst:.1e}, top-k exact, oracle 1.0 on all metrics, constant AUC 0.5"))
}

// 6 ---------------------------------------------------------------------

fn lcs_oracle(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

fn rouge_oracle(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    let l = lcs_oracle(&ta, &tb) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, r) = (l / tb.len() as f64, l / ta.len() as f64);
    2.0 * p * r / (p + r)
}

fn random_text(r: &mut ChaCha8Rng) -> String {
    const WORDS: &[&str] = &["a", "b", "c", "d", "e", "f", "=", ";", "[", "]", "i", "for"];
    let n = r.gen_range(0..25);
    (0..n).map(|_| WORDS[r.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn mutate(r: &mut ChaCha8Rng, s: &str) -> String {
    s.split_whitespace()
        .map(|w| if r.gen_bool(0.3) { "z" } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

fn rouge_and_dedup() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(66);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (a, b) = (random_text(&mut r), random_text(&mut r));
        worst = worst.max((rouge_l(&a, &b) - rouge_oracle(&a, &b)).abs());
    }
    ensure!(worst < 1e-12, "rouge_l deviates by {worst:e}");

    let benchmark: Vec<String> = (0..15).map(|_| random_text(&mut r)).collect();
    let corpus: Vec<SampleRecord> = (0..120)
        .map(|i| SampleRecord {
            id: format!("s{i}"),
            code: if i % 2 == 0 { mutate(&mut r, &benchmark[i % 15]) } else { random_text(&mut r) },
            origin: Origin::Synthetic,
        })
        .collect();
    let flagged: BTreeSet<String> = corpus
        .iter()
        .filter(|s| benchmark.iter().any(|b| rouge_oracle(&s.code, b) > 0.5))
        .map(|s| s.id.clone())
        .collect();
    let (kept, report) = dedup(corpus.clone(), &benchmark, 0.5);
    let removed: BTreeSet<String> = report.removed.iter().map(|x| x.id.clone()).collect();
    ensure!(removed == flagged, "removed {} samples, oracle flags {}", removed.len(), flagged.len());
    ensure!(kept.len() + removed.len() == corpus.len(), "kept + removed != corpus");
    ensure!(!flagged.is_empty() && flagged.len() < corpus.len(), "degenerate dedup instance");
    Ok(format!("rouge_l max deviation {worst:.1e}, dedup removed exactly the {} flagged of {}", flagged.len(), corpus.len()))
}

// 7 ---------------------------------------------------------------------

fn held_out() -> Outcome {
    let start = Instant::now();
    let file = TrainFile::load(&config_path("heldout.toml")).map_err(|e| e.to_string())?;
    let pool = generate_corpus(&synthetic_samples(120, 7), 4, 7).map_err(|e| e.to_string())?.records;
    let split = split_by_group(pool, |r| r.correct_code.clone(), 0.8, 7).map_err(|e| e.to_string())?;
    let train_recs: Vec<BugRecord> = split.train.into_iter().take(256).collect();
    let test_recs: Vec<BugRecord> = split.val.into_iter().take(64).collect();
    ensure!(train_recs.len() == 256 && test_recs.len() == 64, "split sizes {} / {}", train_recs.len(), test_recs.len());
    let seen: BTreeSet<&str> = train_recs.iter().map(|r| r.correct_code.as_str()).collect();
    ensure!(test_recs.iter().all(|r| !seen.contains(r.correct_code.as_str())), "held-out set shares correct samples");

    let vocab = build_vocab(&train_recs, file.model.min_freq).map_err(|e| e.to_string())?;
    let config = file.model.resolve(vocab.len()).map_err(|e| e.to_string())?;
    let data = prepare(&train_recs, &vocab, &config).map_err(|e| e.to_string())?;
    let mut model = Model::<f32>::new(config, vocab, file.train.seed).map_err(|e| e.to_string())?;
    train(&mut model, &data, &file.train, &file.loss, None, &Output::default(), |_, _| false).map_err(|e| e.to_string())?;
    let o = evaluate(&model, &test_recs, Mode::Plain).map_err(|e| e.to_string())?.overall;
    let auc = o.token.auc.unwrap_or(f64::NAN);
    let msg = format!(
        "token AUC {auc:.3}, top-5 {:.3} vs chance {:.3} (top-1 {:.3}, correction {:.3}), {:.1?}",
        o.top5,
        o.top5_chance,
        o.top1,
        o.correction_accuracy,
        start.elapsed()
    );
    ensure!(auc > 0.7 && o.top5 > o.top5_chance, "{msg}");
    Ok(msg)
}

// -----------------------------------------------------------------------

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("criterion {id} PASS  {name}: {detail}");
            true
        }
        Err(why) => {
            println!("criterion {id} FAIL  {name}: {why}");
            false
        }
    }
}

fn main() {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |i: usize| wanted.is_empty() || wanted.contains(&i);
    let mut ok = true;
    if want(1) {
        ok &= run(1, "injector round-trip", injector_round_trip);
    }
    if want(2) {
        ok &= run(2, "gradient correctness", gradient_correctness);
    }
    if want(3) {
        ok &= run(3, "loss fidelity", loss_fidelity);
    }
    let mut overfit = None;
    if want(4) || want(8) {
        let r = catch_unwind(run_overfit).unwrap_or_else(|_| Err("panicked".into()));
        let passed = match r {
            Ok((o, msg)) => {
                overfit = Some(o);
                Ok(msg)
            }
            Err(e) => Err(e),
        };
        if want(4) {
            ok &= run(4, "overfit smoke", || passed);
        }
    }
    if want(5) {
        ok &= run(5, "metric oracles", metric_oracles);
    }
    if want(6) {
        ok &= run(6, "rouge-l and dedup", rouge_and_dedup);
    }
    if want(7) {
        ok &= run(7, "held-out generalization", held_out);
    }
    if want(8) {
        ok &= run(8, "given-location mode", || match &overfit {
            Some(o) => given_location(o),
            None => Err("overfit model unavailable (criterion 4 setup failed)".into()),
        });
    }
    if !ok {
        std::process::exit(1);
    }
}
