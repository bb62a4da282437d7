use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hlsdbg::corpus::llm::{generate_many, HttpClient, PromptTemplates, RetryPolicy};
use hlsdbg::corpus::synth::synthetic_samples;
use hlsdbg::corpus::{
    dedup, ingest, read_jsonl, split_by_group, write_jsonl, DatasetManifest, Origin, SampleDelimiter, SampleRecord,
};
use hlsdbg::eval::{
    evaluate, predicted_span, splice_correction, top_lines, Debugger, MetricsReport, Mode, OracleDebugger,
};
use hlsdbg::forge::{generate_corpus, BugRecord, BugType};
use hlsdbg::lex::lex;
use hlsdbg::model::{line_scores, Model};
use hlsdbg::tensor::Real;
use hlsdbg::train::{
    build_vocab, load_checkpoint, prepare, train, Output, TrainFile, CHECKPOINT_FILE, CURVE_FILE, MODEL_FILE,
};

/// A flag combination clap cannot express.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "hlsdbg", version, about = "Locate and correct logic bugs in HLS C/C++ code")]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect correct code samples from a source tree.
    Ingest(IngestArgs),
    /// Write randomized synthetic HLS kernels as a corpus.
    Synth(SynthArgs),
    /// Inject bugs into every corpus sample.
    Inject(InjectArgs),
    /// Drop dataset entries too similar to a benchmark.
    Dedup(DedupArgs),
    /// Split a dataset into train and validation sets by correct program.
    Split(SplitArgs),
    /// Train a debugger model.
    Train(TrainArgs),
    /// Score a model (or the ground-truth oracle) on a benchmark.
    Eval(EvalArgs),
    /// Rank suspect lines of one file and propose a correction.
    Debug(DebugArgs),
    /// Generate bug records through a chat-completion endpoint.
    GenLlm(GenLlmArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, requires = "delimiter_end")]
    delimiter_begin: Option<String>,
    #[arg(long, requires = "delimiter_begin")]
    delimiter_end: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    per_sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Fraction of records that go to the training side.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    val_out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints, loss curve and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    ckpt: Option<PathBuf>,
    /// Score the ground truth instead of a model (pipeline check).
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    given_location: bool,
    /// Output directory for the report files.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
pub struct DebugArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    file: PathBuf,
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Where to write the run manifest (not written when omitted).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenLlmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    templates: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "gpt-4")]
    model: String,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "HLSDBG_API_KEY")]
    token_env: String,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 4)]
    attempts: u32,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn invocation() -> Vec<String> {
    std::env::args().collect()
}

/// `data/x.jsonl` -> `data/x.manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn refuse_overwrite_input(out: &Path, inputs: &[&Path]) -> Result<()> {
    for input in inputs {
        if out == *input {
            return Err(usage(format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Inject(a) => cmd_inject(a),
        Command::Dedup(a) => cmd_dedup(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => match a.precision {
            Precision::F32 => cmd_train::<f32>(a),
            Precision::F64 => cmd_train::<f64>(a),
        },
        Command::Eval(a) => cmd_eval(a),
        Command::Debug(a) => cmd_debug(a),
        Command::GenLlm(a) => cmd_gen_llm(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let delim = match (a.delimiter_begin, a.delimiter_end) {
        (Some(begin), Some(end)) => SampleDelimiter::Keywords { begin, end },
        _ => SampleDelimiter::WholeFile,
    };
    let report = ingest(&a.src, &delim)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    ensure_parent(&a.out)?;
    write_jsonl(&report.samples, &a.out)?;
    let mut m = DatasetManifest::new(invocation(), None);
    m.counts.insert("samples".into(), report.samples.len());
    m.counts.insert("filtered_files".into(), report.filtered.len());
    m.notes.insert("warnings".into(), json!(report.warnings));
    m.save(&manifest_path(&a.out))?;
    println!(
        "ingest: {} samples from {} ({} files filtered) -> {}",
        report.samples.len(),
        a.src.display(),
        report.filtered.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let samples = synthetic_samples(a.count, a.seed);
    ensure_parent(&a.out)?;
    write_jsonl(&samples, &a.out)?;
    let mut m = DatasetManifest::new(invocation(), Some(a.seed));
    m.counts.insert("samples".into(), samples.len());
    m.save(&manifest_path(&a.out))?;
    println!("synth: {} kernels (seed {}) -> {}", samples.len(), a.seed, a.out.display());
    Ok(())
}

fn cmd_inject(a: InjectArgs) -> Result<()> {
    refuse_overwrite_input(&a.out, &[&a.corpus])?;
    if a.per_sample == 0 {
        return Err(usage("--per-sample must be at least 1"));
    }
    let samples: Vec<SampleRecord> = read_jsonl(&a.corpus)?;
    let report = generate_corpus(&samples, a.per_sample, a.seed)?;
    for s in &report.skipped {
        log::warn!("skipped {}: {}", s.sample_id, s.reason);
    }
    ensure_parent(&a.out)?;
    write_jsonl(&report.records, &a.out)?;
    let mut m = DatasetManifest::new(invocation(), Some(a.seed));
    m.counts.insert("records".into(), report.records.len());
    m.counts.insert("skipped_samples".into(), report.skipped.len());
    m.histogram = report.histogram.clone();
    m.notes.insert("skipped".into(), json!(report.skipped));
    m.save(&manifest_path(&a.out))?;
    println!(
        "inject: {} records from {} samples ({} skipped, {} bug types) -> {}",
        report.records.len(),
        samples.len(),
        report.skipped.len(),
        report.histogram.len(),
        a.out.display()
    );
    Ok(())
}

/// The code a dataset line is compared on: the correct program for bug
/// records, the code itself for corpus samples.
fn comparison_text(v: &Value, path: &Path, line: usize) -> Result<String> {
    for key in ["correct_code", "code"] {
        if let Some(s) = v.get(key).and_then(Value::as_str) {
            return Ok(s.to_string());
        }
    }
    bail!(hlsdbg::Error::Parse {
        path: path.to_path_buf(),
        line,
        message: "entry has neither `correct_code` nor `code`".into(),
    })
}

fn cmd_dedup(a: DedupArgs) -> Result<()> {
    refuse_overwrite_input(&a.out, &[&a.dataset, &a.benchmark])?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage(format!("--threshold {} outside [0, 1]", a.threshold)));
    }
    let entries: Vec<Value> = read_jsonl(&a.dataset)?;
    let bench: Vec<Value> = read_jsonl(&a.benchmark)?;
    let bench_text = bench
        .iter()
        .enumerate()
        .map(|(i, v)| comparison_text(v, &a.benchmark, i + 1))
        .collect::<Result<Vec<_>>>()?;
    let as_samples = entries
        .iter()
        .enumerate()
        .map(|(i, v)| {
            Ok(SampleRecord {
                id: i.to_string(),
                code: comparison_text(v, &a.dataset, i + 1)?,
                origin: Origin::Crawled,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (kept, mut report) = dedup(as_samples, &bench_text, a.threshold);
    let kept_idx: BTreeSet<usize> = kept.iter().map(|s| s.id.parse().expect("index id")).collect();
    let out: Vec<&Value> = entries.iter().enumerate().filter(|(i, _)| kept_idx.contains(i)).map(|(_, v)| v).collect();
    // report entries by their dataset id when they have one
    for r in &mut report.removed {
        let i: usize = r.id.parse().expect("index id");
        if let Some(id) = entries[i].get("id").and_then(Value::as_str) {
            r.id = id.to_string();
        }
    }
    ensure_parent(&a.out)?;
    write_jsonl(&out, &a.out)?;
    let mut m = DatasetManifest::new(invocation(), None);
    m.counts.insert("input".into(), entries.len());
    m.counts.insert("kept".into(), out.len());
    m.counts.insert("removed".into(), report.removed.len());
    m.dedup = Some(report.clone());
    m.save(&manifest_path(&a.out))?;
    println!(
        "dedup: kept {} of {} (removed {} with Rouge-L > {}) -> {}",
        out.len(),
        entries.len(),
        report.removed.len(),
        a.threshold,
        a.out.display()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    refuse_overwrite_input(&a.train_out, &[&a.dataset])?;
    refuse_overwrite_input(&a.val_out, &[&a.dataset, &a.train_out])?;
    if !(a.ratio > 0.0 && a.ratio < 1.0) {
        return Err(usage(format!("--ratio {} outside (0, 1)", a.ratio)));
    }
    let records: Vec<BugRecord> = read_jsonl(&a.dataset)?;
    let total = records.len();
    let s = split_by_group(records, |r| r.correct_code.clone(), a.ratio, a.seed)?;
    for w in &s.warnings {
        log::warn!("{w}");
    }
    ensure_parent(&a.train_out)?;
    ensure_parent(&a.val_out)?;
    write_jsonl(&s.train, &a.train_out)?;
    write_jsonl(&s.val, &a.val_out)?;
    let mut m = DatasetManifest::new(invocation(), Some(a.seed));
    m.counts.insert("train".into(), s.train.len());
    m.counts.insert("val".into(), s.val.len());
    m.notes.insert("warnings".into(), json!(s.warnings));
    m.save(&manifest_path(&a.train_out))?;
    println!(
        "split: {total} records -> {} train ({}), {} val ({})",
        s.train.len(),
        a.train_out.display(),
        s.val.len(),
        a.val_out.display()
    );
    Ok(())
}

fn cmd_train<T: Real>(a: TrainArgs) -> Result<()> {
    let file = TrainFile::load(&a.config)?;
    let records: Vec<BugRecord> = read_jsonl(&a.dataset)?;
    if records.is_empty() {
        bail!(hlsdbg::Error::Data(format!("{}: dataset is empty", a.dataset.display())));
    }
    let ckpt = a.out.join(CHECKPOINT_FILE);
    let (mut model, resume) = if a.resume {
        let (m, state) = load_checkpoint::<T>(&ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
        (m, Some(state))
    } else {
        let vocab = build_vocab(&records, file.model.min_freq)?;
        let config = file.model.resolve(vocab.len())?;
        (Model::<T>::new(config, vocab, file.train.seed)?, None)
    };
    let data = prepare(&records, &model.vocab, &model.config).with_context(|| format!("preparing {}", a.dataset.display()))?;
    let truncated = data.iter().filter(|e| e.truncated).count();
    if truncated > 0 {
        log::warn!("{truncated} records truncated to the model's length limits");
    }
    let out = Output { dir: Some(a.out.clone()) };
    let report = train(&mut model, &data, &file.train, &file.loss, resume, &out, |_, _| false).map_err(|e| {
        let e = anyhow::Error::from(e);
        if ckpt.exists() {
            e.context(format!("training aborted; last good checkpoint kept at {}", ckpt.display()))
        } else {
            e.context("training aborted")
        }
    })?;
    let last = report.curve.last().copied();
    let mut m = DatasetManifest::new(invocation(), Some(file.train.seed));
    m.counts.insert("records".into(), records.len());
    m.counts.insert("truncated".into(), truncated);
    m.counts.insert("steps".into(), report.curve.len());
    m.counts.insert("parameters".into(), model.num_parameters());
    m.notes.insert("train_file".into(), serde_json::to_value(&file)?);
    m.notes.insert("model".into(), serde_json::to_value(&model.config)?);
    m.notes.insert("precision".into(), json!(std::any::type_name::<T>()));
    m.notes.insert("final_loss".into(), json!(last));
    m.save(&a.out.join("manifest.json"))?;
    println!(
        "train: {} records, {} epochs, {} steps, final loss {} -> {}",
        records.len(),
        report.epochs_run,
        report.curve.len(),
        last.map_or("n/a".into(), |r| format!("{:.5}", r.l_all)),
        a.out.join(MODEL_FILE).display()
    );
    log::info!("loss curve in {}", a.out.join(CURVE_FILE).display());
    Ok(())
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    put("report.txt", report.to_text())?;
    put("report.csv", report.to_csv())?;
    put(
        "metrics.json",
        serde_json::to_string_pretty(&json!({
            "mode": report.mode,
            "overall": report.overall,
            "per_bug_type": report.per_bug_type,
        }))? + "\n",
    )?;
    write_jsonl(&report.results, &dir.join("predictions.jsonl"))?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let records: Vec<BugRecord> = read_jsonl(&a.benchmark)?;
    let mode = if a.given_location { Mode::GivenLocation } else { Mode::Plain };
    let model;
    let debugger: &dyn Debugger = match &a.ckpt {
        Some(p) => {
            model = Model::<f32>::load(p).with_context(|| format!("loading {}", p.display()))?;
            &model
        }
        None => &OracleDebugger,
    };
    let report = evaluate(debugger, &records, mode).with_context(|| format!("evaluating {}", a.benchmark.display()))?;
    write_report(&a.report, &report)?;
    let mut m = DatasetManifest::new(invocation(), None);
    m.counts.insert("samples".into(), records.len());
    for r in &report.results {
        *m.histogram.entry(r.bug_type).or_default() += 1;
    }
    m.notes.insert("mode".into(), json!(mode));
    m.save(&a.report.join("manifest.json"))?;
    let o = &report.overall;
    println!(
        "eval: {} samples ({:?}), token F1 {:.4}, line F1 {:.4}, top-1 {:.4}, top-5 {:.4}, correction {:.4} -> {}",
        o.samples,
        mode,
        o.token.f1,
        o.line.f1,
        o.top1,
        o.top5,
        o.correction_accuracy,
        a.report.display()
    );
    Ok(())
}

fn cmd_debug(a: DebugArgs) -> Result<()> {
    if a.top == 0 {
        return Err(usage("--top must be at least 1"));
    }
    let model = Model::<f32>::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let code = fs::read_to_string(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let stream = lex(&code).with_context(|| format!("lexing {}", a.file.display()))?;
    if stream.n_tokens() == 0 {
        bail!(hlsdbg::Error::Data(format!("{}: no code tokens", a.file.display())));
    }
    let ids: Vec<usize> = stream.texts().map(|t| model.vocab.id(t)).collect();
    let p = model.predict(&ids, None, model.config.max_tgt_len - 1)?;
    let probs: Vec<f64> = p.token_bug_probs.iter().map(|&x| f64::from(x)).collect();
    let scores = line_scores(&probs, &stream)?;
    let ranked = top_lines(&scores, a.top);
    let type_probs: Vec<f64> = p.type_probs.iter().map(|&x| f64::from(x)).collect();
    let best = (0..type_probs.len()).fold(0, |b, i| if type_probs[i] > type_probs[b] { i } else { b });
    let bug_type = BugType::from_index(best).expect("eight classes");
    let snippet = model.vocab.decode(&p.generated);
    let span = predicted_span(&probs).expect("non-empty stream");
    let corrected = splice_correction(&stream, span.clone(), &snippet)?;
    let lines: Vec<&str> = code.lines().collect();

    println!(
        "debug: {} -> most suspect line {} ({:.4}), type {} ({:.4}){}",
        a.file.display(),
        ranked[0],
        scores[&ranked[0]],
        bug_type,
        type_probs[best],
        if p.truncated { ", input truncated" } else { "" }
    );
    println!("suspect lines:");
    for l in &ranked {
        println!("  {:>5}  {:.4}  {}", l, scores[l], lines.get(l - 1).map_or("", |s| s.trim()));
    }
    println!("predicted bug type: {bug_type} ({:.4})", type_probs[best]);
    let buggy = &code[stream.tokens[span.start].byte_start..stream.tokens[span.end - 1].byte_end];
    println!("replace: {buggy}");
    println!("with:    {snippet}");
    println!("--- corrected file ---");
    print!("{corrected}");
    if !corrected.ends_with('\n') {
        println!();
    }

    if let Some(path) = &a.manifest {
        let mut m = DatasetManifest::new(invocation(), None);
        m.notes.insert("file".into(), json!(a.file));
        m.notes.insert("top_lines".into(), json!(ranked));
        m.notes.insert("bug_type".into(), json!(bug_type));
        m.notes.insert("snippet".into(), json!(snippet));
        ensure_parent(path)?;
        m.save(path)?;
    }
    Ok(())
}

fn cmd_gen_llm(a: GenLlmArgs) -> Result<()> {
    refuse_overwrite_input(&a.out, &[&a.corpus, &a.templates])?;
    let text = fs::read_to_string(&a.templates).with_context(|| format!("reading {}", a.templates.display()))?;
    let templates = PromptTemplates::from_toml(&text).with_context(|| format!("in {}", a.templates.display()))?;
    let samples: Vec<SampleRecord> = read_jsonl(&a.corpus)?;
    let client = HttpClient {
        model: a.model.clone(),
        token_env: a.token_env.clone(),
        timeout: Duration::from_secs(a.timeout_secs),
        ..HttpClient::new(a.endpoint.clone())
    };
    let policy = RetryPolicy {
        attempts: a.attempts,
        ..RetryPolicy::default()
    };
    let outcome = generate_many(&client, &samples, &templates, policy, a.max_in_flight)?;
    for s in &outcome.skipped {
        log::warn!("skipped {}: {}", s.sample_id, s.reason);
    }
    ensure_parent(&a.out)?;
    write_jsonl(&outcome.records, &a.out)?;
    let mut m = DatasetManifest::new(invocation(), None);
    m.counts.insert("records".into(), outcome.records.len());
    m.counts.insert("skipped".into(), outcome.skipped.len());
    for r in &outcome.records {
        *m.histogram.entry(r.bug_type).or_default() += 1;
    }
    m.notes.insert("endpoint".into(), json!(a.endpoint));
    m.notes.insert("model".into(), json!(a.model));
    m.notes.insert("skipped".into(), json!(outcome.skipped));
    m.save(&manifest_path(&a.out))?;
    println!(
        "gen-llm: {} records from {} samples ({} skipped) -> {}",
        outcome.records.len(),
        samples.len(),
        outcome.skipped.len(),
        a.out.display()
    );
    Ok(())
}
