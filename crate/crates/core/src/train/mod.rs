//! Joint training of the location, type and correction objectives.

mod loss;

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use loss::{loss_all, loss_all_var, loss_bug, loss_decoder, loss_type, LossWeights};

use crate::error::{Error, Result};
use crate::forge::{verify_record, BugRecord};
use crate::model::{vocab, Model, ModelConfig, Vocab};
use crate::tensor::checkpoint::Container;
use crate::tensor::{clip_grad_norm, Adam, AdamConfig, Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Write a resumable checkpoint every this many epochs (0 = only at the
    /// end).
    pub checkpoint_every: usize,
    /// Global gradient-norm clip (0 disables clipping).
    pub clip_norm: f64,
    /// Probability that a training example is shown with its bug location
    /// marked, so the same model serves both inference modes.
    pub location_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            checkpoint_every: 0,
            clip_norm: 1.0,
            location_rate: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(0.0..=1.0).contains(&self.location_rate) || self.clip_norm < 0.0 {
            return Err(Error::Config(format!("invalid training hyper-parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Model shape section of a training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// `desk` or `reference`.
    pub preset: String,
    pub n_layers_enc: Option<usize>,
    pub n_layers_dec: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_src_len: Option<usize>,
    pub max_tgt_len: Option<usize>,
    pub head_mlp_layers: Option<usize>,
    pub dropout: Option<f64>,
    /// Vocabulary frequency cutoff.
    pub min_freq: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            preset: "desk".into(),
            n_layers_enc: None,
            n_layers_dec: None,
            d_model: None,
            n_heads: None,
            d_ff: None,
            max_src_len: None,
            max_tgt_len: None,
            head_mlp_layers: None,
            dropout: None,
            min_freq: 1,
        }
    }
}

impl ModelSpec {
    pub fn resolve(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut c = match self.preset.as_str() {
            "desk" => ModelConfig::desk(vocab_size),
            "reference" => ModelConfig::reference(vocab_size),
            other => return Err(Error::Config(format!("unknown model preset `{other}`"))),
        };
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        apply!(n_layers_enc, n_layers_dec, d_model, n_heads, d_ff, max_src_len, max_tgt_len, head_mlp_layers, dropout);
        c.validate()?;
        Ok(c)
    }
}

/// Everything a `train` run reads from its config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub model: ModelSpec,
}

impl TrainFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: TrainFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        f.train.validate()?;
        f.loss.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Vocabulary over the buggy code and correct snippets of `records`.
pub fn build_vocab(records: &[BugRecord], min_freq: usize) -> Result<Vocab> {
    Vocab::build(
        records
            .iter()
            .flat_map(|r| [r.buggy_code.as_str(), r.snippet_correct.as_str()]),
        min_freq,
    )
}

/// A record mapped to model ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src: Vec<usize>,
    pub labels: Vec<u8>,
    pub bug_type: usize,
    /// Correct snippet ids without END.
    pub target: Vec<usize>,
    /// Token interval of the buggy snippet in `src`.
    pub span: Range<usize>,
    pub truncated: bool,
}

impl Example {
    pub fn from_record(record: &BugRecord, vocab: &Vocab, config: &ModelConfig) -> Result<Self> {
        let mut src = vocab.encode(&record.buggy_code)?;
        if src.len() != record.token_labels.len() {
            return Err(Error::Data(format!(
                "{}: {} token labels for {} tokens",
                record.id,
                record.token_labels.len(),
                src.len()
            )));
        }
        let mut labels = record.token_labels.clone();
        let mut target = vocab.encode(&record.snippet_correct)?;
        if target.is_empty() {
            return Err(Error::Data(format!("{}: empty correct snippet", record.id)));
        }
        // room for CLS and the two location sentinels
        let room = config.max_src_len.saturating_sub(3);
        let truncated = src.len() > room || target.len() > config.max_tgt_len - 1;
        src.truncate(room);
        labels.truncate(room);
        target.truncate(config.max_tgt_len - 1);
        let first = labels.iter().position(|&l| l == 1).unwrap_or(labels.len());
        let last = labels.iter().rposition(|&l| l == 1).map_or(first, |p| p + 1);
        Ok(Example {
            src,
            labels,
            bug_type: record.bug_type.index(),
            target,
            span: first..last,
            truncated,
        })
    }
}

/// Maps records to examples, rejecting any that fail verification.
pub fn prepare(records: &[BugRecord], vocab: &Vocab, config: &ModelConfig) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            if !verify_record(r) {
                return Err(Error::Data(format!("record {} fails verification", r.id)));
            }
            Example::from_record(r, vocab, config)
        })
        .collect()
}

/// Padded model inputs and loss targets for one batch.
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub tgt_in: Vec<Vec<usize>>,
    pub tgt_out: Vec<Vec<usize>>,
    pub types: Vec<usize>,
    /// Row-major `[B, S]` labels and loss mask; CLS, sentinels and padding
    /// are masked out.
    pub labels: Vec<u8>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn new(examples: &[&Example], with_location: &[bool]) -> Result<Self> {
        let mut rows = Vec::with_capacity(examples.len());
        let mut lab_rows = Vec::with_capacity(examples.len());
        for (ex, &loc) in examples.iter().zip(with_location) {
            let mut row = vec![vocab::CLS];
            let mut lab: Vec<Option<u8>> = vec![None];
            if loc {
                row.extend(Model::<f64>::with_location(&ex.src, ex.span.clone())?);
                for (i, &l) in ex.labels.iter().enumerate() {
                    if i == ex.span.start {
                        lab.push(None);
                    }
                    if i == ex.span.end {
                        lab.push(None);
                    }
                    lab.push(Some(l));
                }
                if ex.span.start == ex.labels.len() {
                    lab.push(None);
                }
                if ex.span.end == ex.labels.len() {
                    lab.push(None);
                }
            } else {
                row.extend_from_slice(&ex.src);
                lab.extend(ex.labels.iter().map(|&l| Some(l)));
            }
            debug_assert_eq!(row.len(), lab.len());
            rows.push(row);
            lab_rows.push(lab);
        }
        let s = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut labels = Vec::with_capacity(rows.len() * s);
        let mut mask = Vec::with_capacity(rows.len() * s);
        for lab in &lab_rows {
            for j in 0..s {
                let v = lab.get(j).copied().flatten();
                labels.push(v.unwrap_or(0));
                mask.push(v.is_some());
            }
        }
        let tgt_in = examples
            .iter()
            .map(|e| std::iter::once(vocab::START).chain(e.target.iter().copied()).collect())
            .collect();
        let tgt_out = examples
            .iter()
            .map(|e| e.target.iter().copied().chain(std::iter::once(vocab::END)).collect())
            .collect();
        Ok(Batch {
            src: rows,
            tgt_in,
            tgt_out,
            types: examples.iter().map(|e| e.bug_type).collect(),
            labels,
            mask,
        })
    }
}

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub epoch: usize,
    pub l_type: f64,
    pub l_bug: f64,
    pub l_decoder: f64,
    pub l_all: f64,
}

/// Builds the loss graph for one batch and returns
/// `(L_all, [L_type, L_bug, L_decoder])` variables.
pub fn batch_loss<'p, T: Real>(
    model: &'p Model<T>,
    t: &mut Tape<'p, T>,
    batch: &Batch,
    weights: &LossWeights,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(crate::tensor::Var, [crate::tensor::Var; 3])> {
    let fwd = model.forward(t, &batch.src, &batch.tgt_in, rng)?;
    let lt = loss_type(t, fwd.type_logits, &batch.types)?;
    let lb = loss_bug(t, fwd.bug_logits, &batch.labels, &batch.mask, weights)?;
    let ld = loss_decoder(t, fwd.dec_logits, &batch.tgt_out, fwd.tgt_len)?;
    let all = loss_all_var(t, lt, lb, ld, weights)?;
    Ok((all, [lt, lb, ld]))
}

/// Optimizer position for resuming a run.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
    pub adam: Adam<T>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossRow>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Where and how often a run persists itself.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub dir: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const CURVE_FILE: &str = "loss_curve.csv";

/// Writes `model` with optimizer state; replaced atomically.
pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>, state: &TrainState<T>, cfg: &TrainConfig) -> Result<()> {
    let mut c = model.to_container();
    c.metadata["train"] = json!({
        "epoch": state.epoch,
        "step": state.step,
        "adam_step": state.adam.steps_taken(),
        "adam": state.adam.config,
        "config": cfg,
    });
    for ((name, _), (m, v)) in model.params.iter().zip(state.adam.moments()) {
        c.push_raw(format!("adam.m.{name}"), &[m.len()], m);
        c.push_raw(format!("adam.v.{name}"), &[v.len()], v);
    }
    let tmp = path.with_extension("tmp");
    c.save(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Model<T>, TrainState<T>)> {
    let c = Container::load(path)?;
    let model = Model::<T>::from_container(&c)?;
    let meta = &c.metadata["train"];
    let bad = || Error::Config(format!("{}: not a resumable training checkpoint", path.display()));
    let epoch = meta["epoch"].as_u64().ok_or_else(bad)? as usize;
    let step = meta["step"].as_u64().ok_or_else(bad)?;
    let adam_step = meta["adam_step"].as_u64().ok_or_else(bad)?;
    let adam_cfg: AdamConfig = serde_json::from_value(meta["adam"].clone()).map_err(|_| bad())?;
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (name, _) in model.params.iter() {
        first.push(c.tensor::<T>(&format!("adam.m.{name}"))?.into_data());
        second.push(c.tensor::<T>(&format!("adam.v.{name}"))?.into_data());
    }
    let adam = Adam::restore(adam_cfg, adam_step, first, second)?;
    Ok((model, TrainState { epoch, step, adam }))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Runs the training loop. `on_epoch(epoch, model)` is called after each
/// epoch; returning `true` stops training.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &[Example],
    cfg: &TrainConfig,
    weights: &LossWeights,
    resume: Option<TrainState<T>>,
    out: &Output,
    mut on_epoch: impl FnMut(usize, &Model<T>) -> bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    weights.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut state = resume.unwrap_or_else(|| TrainState {
        epoch: 0,
        step: 0,
        adam: Adam::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            &model.params,
        ),
    });
    let mut curve_file = match &out.dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(CURVE_FILE);
            let fresh = state.epoch == 0 || !path.exists();
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "step,epoch,l_type,l_bug,l_decoder,l_all").map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };

    let mut report = TrainReport::default();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let located: Vec<bool> = (0..data.len()).map(|_| rng.gen_bool(cfg.location_rate)).collect();
        for chunk in order.chunks(cfg.batch_size) {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let flags: Vec<bool> = chunk.iter().map(|&i| located[i]).collect();
            let batch = Batch::new(&examples, &flags)?;
            model.params.zero_grad();
            let (row, grads) = {
                let mut tape = Tape::with_params(&model.params);
                let (all, parts) = batch_loss(model, &mut tape, &batch, weights, Some(&mut rng))?;
                let [lt, lb, ld] = parts.map(|v| tape.scalar(v).to_f64().unwrap_or(f64::NAN));
                let l_all = tape.scalar(all).to_f64().unwrap_or(f64::NAN);
                if !l_all.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became {l_all} at step {} (epoch {epoch})",
                        state.step
                    )));
                }
                let row = LossRow {
                    step: state.step,
                    epoch,
                    l_type: lt,
                    l_bug: lb,
                    l_decoder: ld,
                    l_all,
                };
                (row, tape.backward(all)?)
            };
            grads.accumulate_into(&mut model.params)?;
            drop(grads);
            if cfg.clip_norm > 0.0 {
                clip_grad_norm(&mut model.params, cfg.clip_norm);
            }
            state.adam.step(&mut model.params)?;
            state.step += 1;
            if let Some((f, path)) = &mut curve_file {
                writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    row.step, row.epoch, row.l_type, row.l_bug, row.l_decoder, row.l_all
                )
                .map_err(|e| Error::io(path.as_path(), e))?;
            }
            report.curve.push(row);
        }
        state.epoch += 1;
        report.epochs_run += 1;
        log::info!(
            "epoch {} done, last loss {:.5}",
            state.epoch,
            report.curve.last().map_or(f64::NAN, |r| r.l_all)
        );
        if let Some(dir) = &out.dir {
            if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(CHECKPOINT_FILE), model, &state, cfg)?;
            }
        }
        if on_epoch(state.epoch, model) {
            report.stopped_early = state.epoch < cfg.epochs;
            break;
        }
    }
    if let Some(dir) = &out.dir {
        save_checkpoint(&dir.join(CHECKPOINT_FILE), model, &state, cfg)?;
        model.save(&dir.join(MODEL_FILE))?;
    }
    Ok(report)
}

/// Reads a loss curve CSV written by [`train`].
pub fn read_curve(path: &Path) -> Result<Vec<LossRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parse_err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m,
        };
        if f.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(e.to_string()));
        out.push(LossRow {
            step: f[0].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            epoch: f[1].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            l_type: num(f[2])?,
            l_bug: num(f[3])?,
            l_decoder: num(f[4])?,
            l_all: num(f[5])?,
        });
    }
    Ok(out)
}

/// Copies the values of `src` into a tensor of another precision.
pub fn convert_model<T: Real, U: Real>(model: &Model<T>) -> Result<Model<U>> {
    let mut out = Model::<U>::new(model.config.clone(), model.vocab.clone(), 0)?;
    let ids: Vec<_> = out.params.ids().collect();
    for id in ids {
        let src: Tensor<U> = model.params.get(id).cast();
        out.params.get_mut(id).data_mut().copy_from_slice(src.data());
    }
    Ok(out)
}
