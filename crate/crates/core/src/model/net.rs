use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::vocab::{self, Vocab};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::checkpoint::Container;
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attention,
    ln2: Norm,
    cross: Attention,
    ln3: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: ParamId,
    pos_src: ParamId,
    pos_tgt: ParamId,
    enc: Vec<EncoderLayer>,
    enc_norm: Norm,
    dec: Vec<DecoderLayer>,
    dec_norm: Norm,
    bug_head: Vec<Linear>,
    type_head: Vec<Linear>,
    lm_head: Linear,
}

struct Init<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Init<'_, T> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.gen_range(-bound..=bound)))
            .collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = vec![T::from_f64_lossy(value); n];
        self.store.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            w: self.uniform(format!("{name}.w"), &[fan_in, fan_out], bound),
            b: self.fill(format!("{name}.b"), &[fan_out], 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.fill(format!("{name}.g"), &[d], 1.0),
            b: self.fill(format!("{name}.b"), &[d], 0.0),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn mlp(&mut self, name: &str, d: usize, out: usize, layers: usize) -> Vec<Linear> {
        (0..layers)
            .map(|l| {
                let o = if l + 1 == layers { out } else { d };
                self.linear(&format!("{name}.{l}"), d, o)
            })
            .collect()
    }
}

/// Encoder states for one source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    /// `[1 + N, d]`: row 0 is the CLS state, rows 1.. align with the input.
    pub states: Tensor<T>,
    /// Source was cut to fit `max_src_len`.
    pub truncated: bool,
}

impl<T: Real> EncoderOutput<T> {
    pub fn n_tokens(&self) -> usize {
        self.states.shape()[0] - 1
    }

    pub fn d_model(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn e_cls(&self) -> &[T] {
        &self.states.data()[..self.d_model()]
    }

    pub fn e_tokens(&self) -> &[T] {
        &self.states.data()[self.d_model()..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    /// One probability per source token; tokens lost to truncation get 0.
    pub token_bug_probs: Vec<T>,
    pub type_probs: Vec<T>,
    pub generated: Vec<usize>,
    pub truncated: bool,
}

/// Output variables of a training forward pass over a padded batch.
pub struct Forward {
    /// `[B * S]`, position 0 of each row is CLS.
    pub bug_logits: Var,
    /// `[B, n_bug_types]`.
    pub type_logits: Var,
    /// `[B * K, vocab]`.
    pub dec_logits: Var,
    pub src_len: usize,
    pub tgt_len: usize,
}

/// Encoder-decoder debugger network.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore<T>,
    layout: Layout,
}

fn pad_rows(rows: &[Vec<usize>], width: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for r in rows {
        out.extend_from_slice(r);
        out.extend(std::iter::repeat(vocab::PAD).take(width - r.len()));
    }
    out
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "config vocab_size {} does not match vocabulary of {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut params = ParamStore::new();
        let c = &config;
        let d = c.d_model;
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let emb_bound = 0.02 * 3f64.sqrt();
        let tok_emb = init.uniform("tok_emb".into(), &[c.vocab_size, d], emb_bound);
        let pos_src = init.uniform("pos_src".into(), &[c.max_src_len, d], emb_bound);
        let pos_tgt = init.uniform("pos_tgt".into(), &[c.max_tgt_len, d], emb_bound);
        let enc = (0..c.n_layers_enc)
            .map(|l| {
                let n = format!("enc.{l}");
                EncoderLayer {
                    ln1: init.norm(&format!("{n}.ln1"), d),
                    attn: init.attention(&format!("{n}.attn"), d),
                    ln2: init.norm(&format!("{n}.ln2"), d),
                    ff1: init.linear(&format!("{n}.ff1"), d, c.d_ff),
                    ff2: init.linear(&format!("{n}.ff2"), c.d_ff, d),
                }
            })
            .collect();
        let enc_norm = init.norm("enc.norm", d);
        let dec = (0..c.n_layers_dec)
            .map(|l| {
                let n = format!("dec.{l}");
                DecoderLayer {
                    ln1: init.norm(&format!("{n}.ln1"), d),
                    self_attn: init.attention(&format!("{n}.self"), d),
                    ln2: init.norm(&format!("{n}.ln2"), d),
                    cross: init.attention(&format!("{n}.cross"), d),
                    ln3: init.norm(&format!("{n}.ln3"), d),
                    ff1: init.linear(&format!("{n}.ff1"), d, c.d_ff),
                    ff2: init.linear(&format!("{n}.ff2"), c.d_ff, d),
                }
            })
            .collect();
        let dec_norm = init.norm("dec.norm", d);
        let bug_head = init.mlp("head_bug", d, 1, c.head_mlp_layers);
        let type_head = init.mlp("head_type", d, c.n_bug_types, c.head_mlp_layers);
        let lm_head = init.linear("lm_head", d, c.vocab_size);
        let layout = Layout {
            tok_emb,
            pos_src,
            pos_tgt,
            enc,
            enc_norm,
            dec,
            dec_norm,
            bug_head,
            type_head,
            lm_head,
        };
        Ok(Model {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Parameter ids of the two prediction heads.
    pub fn head_params(&self) -> Vec<ParamId> {
        let l = &self.layout;
        l.bug_head.iter().chain(&l.type_head).flat_map(|x| [x.w, x.b]).collect()
    }

    /// Parameter ids used only by the decoder path.
    pub fn decoder_params(&self) -> Vec<ParamId> {
        let l = &self.layout;
        let mut out = vec![l.pos_tgt, l.dec_norm.g, l.dec_norm.b, l.lm_head.w, l.lm_head.b];
        for layer in &l.dec {
            for n in [layer.ln1, layer.ln2, layer.ln3] {
                out.extend([n.g, n.b]);
            }
            for a in [layer.self_attn, layer.cross] {
                for x in [a.q, a.k, a.v, a.o] {
                    out.extend([x.w, x.b]);
                }
            }
            for x in [layer.ff1, layer.ff2] {
                out.extend([x.w, x.b]);
            }
        }
        out
    }

    // ---- building blocks ---------------------------------------------------

    fn linear<'p>(&'p self, t: &mut Tape<'p, T>, x: Var, lin: Linear) -> Result<Var> {
        let w = t.param(lin.w);
        let b = t.param(lin.b);
        let y = t.matmul(x, w)?;
        t.add(y, b)
    }

    fn norm<'p>(&'p self, t: &mut Tape<'p, T>, x: Var, n: Norm) -> Result<Var> {
        let g = t.param(n.g);
        let b = t.param(n.b);
        t.layer_norm(x, g, b, LN_EPS)
    }

    fn dropout<'p>(&'p self, t: &mut Tape<'p, T>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
        let p = self.config.dropout;
        let Some(rng) = rng.as_mut() else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let shape = t.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = t.constant(shape, mask)?;
        t.mul(x, m)
    }

    /// Splits `[B, L, d]` into `[B * H, L, dh]`.
    fn heads<'p>(&'p self, t: &mut Tape<'p, T>, x: Var, b: usize, len: usize) -> Result<Var> {
        let h = self.config.n_heads;
        let dh = self.config.head_dim();
        let x = t.reshape(x, &[b, len, h, dh])?;
        let x = t.permute(x, &[0, 2, 1, 3])?;
        t.reshape(x, &[b * h, len, dh])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention<'p>(
        &'p self,
        t: &mut Tape<'p, T>,
        a: Attention,
        q_in: Var,
        kv_in: Var,
        b: usize,
        lq: usize,
        lk: usize,
        keep: &[bool],
    ) -> Result<Var> {
        let h = self.config.n_heads;
        let dh = self.config.head_dim();
        let q = self.linear(t, q_in, a.q)?;
        let k = self.linear(t, kv_in, a.k)?;
        let v = self.linear(t, kv_in, a.v)?;
        let q = self.heads(t, q, b, lq)?;
        let k = self.heads(t, k, b, lk)?;
        let v = self.heads(t, v, b, lk)?;
        let scores = t.matmul_nt(q, k)?;
        let scores = t.attention_mask(scores, keep, 1.0 / (dh as f64).sqrt(), h)?;
        let p = t.softmax(scores, 2)?;
        let o = t.matmul(p, v)?;
        let o = t.reshape(o, &[b, h, lq, dh])?;
        let o = t.permute(o, &[0, 2, 1, 3])?;
        let o = t.reshape(o, &[b, lq, self.config.d_model])?;
        self.linear(t, o, a.o)
    }

    fn feed_forward<'p>(&'p self, t: &mut Tape<'p, T>, x: Var, ff1: Linear, ff2: Linear) -> Result<Var> {
        let h = self.linear(t, x, ff1)?;
        let h = t.gelu(h);
        self.linear(t, h, ff2)
    }

    fn mlp<'p>(&'p self, t: &mut Tape<'p, T>, x: Var, layers: &[Linear]) -> Result<Var> {
        let mut h = x;
        for (i, &lin) in layers.iter().enumerate() {
            h = self.linear(t, h, lin)?;
            if i + 1 < layers.len() {
                h = t.gelu(h);
            }
        }
        Ok(h)
    }

    fn embed<'p>(
        &'p self,
        t: &mut Tape<'p, T>,
        ids: &[usize],
        pos_table: ParamId,
        b: usize,
        len: usize,
    ) -> Result<Var> {
        let table = t.param(self.layout.tok_emb);
        let x = t.embedding(table, ids)?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..len).collect();
        let pt = t.param(pos_table);
        let p = t.embedding(pt, &positions)?;
        let x = t.add(x, p)?;
        t.reshape(x, &[b, len, self.config.d_model])
    }

    // ---- batched passes ----------------------------------------------------

    /// Encodes padded source rows; each row must already start with CLS.
    /// Returns the final-normalized states `[B, S, d]`.
    pub fn encode_batch<'p>(
        &'p self,
        t: &mut Tape<'p, T>,
        src: &[Vec<usize>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, usize)> {
        let b = src.len();
        let s = src.iter().map(Vec::len).max().unwrap_or(0);
        if b == 0 || s == 0 || s > self.config.max_src_len {
            return Err(Error::arg(format!(
                "source batch of {b} rows with length {s} (max {})",
                self.config.max_src_len
            )));
        }
        let ids = pad_rows(src, s);
        let mut keep = Vec::with_capacity(b * s * s);
        for row in src {
            for _ in 0..s {
                keep.extend((0..s).map(|k| k < row.len()));
            }
        }
        let mut x = self.embed(t, &ids, self.layout.pos_src, b, s)?;
        x = self.dropout(t, x, &mut rng)?;
        for layer in &self.layout.enc {
            let h = self.norm(t, x, layer.ln1)?;
            let a = self.attention(t, layer.attn, h, h, b, s, s, &keep)?;
            let a = self.dropout(t, a, &mut rng)?;
            x = t.add(x, a)?;
            let h = self.norm(t, x, layer.ln2)?;
            let f = self.feed_forward(t, h, layer.ff1, layer.ff2)?;
            let f = self.dropout(t, f, &mut rng)?;
            x = t.add(x, f)?;
        }
        Ok((self.norm(t, x, self.layout.enc_norm)?, s))
    }

    /// Per-position bug logits `[B * S]` from encoder states `[B, S, d]`.
    pub fn bug_logits<'p>(&'p self, t: &mut Tape<'p, T>, enc: Var) -> Result<Var> {
        let shape = t.shape(enc).to_vec();
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = t.reshape(enc, &[rows, self.config.d_model])?;
        let logits = self.mlp(t, flat, &self.layout.bug_head)?;
        t.reshape(logits, &[rows])
    }

    /// Bug-type logits `[B, n_bug_types]` from the CLS rows.
    pub fn type_logits<'p>(&'p self, t: &mut Tape<'p, T>, enc: Var) -> Result<Var> {
        let shape = t.shape(enc).to_vec();
        let (b, s) = (shape[0], shape[1]);
        let flat = t.reshape(enc, &[b * s, self.config.d_model])?;
        let rows: Vec<usize> = (0..b).map(|i| i * s).collect();
        let cls = t.embedding(flat, &rows)?;
        self.mlp(t, cls, &self.layout.type_head)
    }

    /// Teacher-forced decoder logits `[B * K, vocab]`.
    pub fn decode_batch<'p>(
        &'p self,
        t: &mut Tape<'p, T>,
        enc: Var,
        src_lens: &[usize],
        tgt_in: &[Vec<usize>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, usize)> {
        let b = tgt_in.len();
        let s = t.shape(enc)[1];
        let k = tgt_in.iter().map(Vec::len).max().unwrap_or(0);
        if b != src_lens.len() || k == 0 || k > self.config.max_tgt_len {
            return Err(Error::arg(format!(
                "target batch of {b} rows with length {k} (max {})",
                self.config.max_tgt_len
            )));
        }
        let ids = pad_rows(tgt_in, k);
        let mut self_keep = Vec::with_capacity(b * k * k);
        let mut cross_keep = Vec::with_capacity(b * k * s);
        for (row, &sl) in tgt_in.iter().zip(src_lens) {
            for q in 0..k {
                self_keep.extend((0..k).map(|j| j <= q && j < row.len()));
                cross_keep.extend((0..s).map(|j| j < sl));
            }
        }
        let mut y = self.embed(t, &ids, self.layout.pos_tgt, b, k)?;
        y = self.dropout(t, y, &mut rng)?;
        for layer in &self.layout.dec {
            let h = self.norm(t, y, layer.ln1)?;
            let a = self.attention(t, layer.self_attn, h, h, b, k, k, &self_keep)?;
            let a = self.dropout(t, a, &mut rng)?;
            y = t.add(y, a)?;
            let h = self.norm(t, y, layer.ln2)?;
            let c = self.attention(t, layer.cross, h, enc, b, k, s, &cross_keep)?;
            let c = self.dropout(t, c, &mut rng)?;
            y = t.add(y, c)?;
            let h = self.norm(t, y, layer.ln3)?;
            let f = self.feed_forward(t, h, layer.ff1, layer.ff2)?;
            let f = self.dropout(t, f, &mut rng)?;
            y = t.add(y, f)?;
        }
        let y = self.norm(t, y, self.layout.dec_norm)?;
        let y = t.reshape(y, &[b * k, self.config.d_model])?;
        Ok((self.linear(t, y, self.layout.lm_head)?, k))
    }

    /// Full training pass: `src` rows start with CLS, `tgt_in` rows with
    /// START.
    pub fn forward<'p>(
        &'p self,
        t: &mut Tape<'p, T>,
        src: &[Vec<usize>],
        tgt_in: &[Vec<usize>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let (enc, s) = self.encode_batch(t, src, rng.as_deref_mut())?;
        let bug_logits = self.bug_logits(t, enc)?;
        let type_logits = self.type_logits(t, enc)?;
        let lens: Vec<usize> = src.iter().map(Vec::len).collect();
        let (dec_logits, k) = self.decode_batch(t, enc, &lens, tgt_in, rng)?;
        Ok(Forward {
            bug_logits,
            type_logits,
            dec_logits,
            src_len: s,
            tgt_len: k,
        })
    }

    // ---- inference ---------------------------------------------------------

    /// Encodes `[CLS] || src_ids`, truncating to `max_src_len` if needed.
    pub fn encode(&self, src_ids: &[usize]) -> Result<EncoderOutput<T>> {
        let room = self.config.max_src_len - 1;
        let truncated = src_ids.len() > room;
        let mut row = Vec::with_capacity(src_ids.len().min(room) + 1);
        row.push(vocab::CLS);
        row.extend_from_slice(&src_ids[..src_ids.len().min(room)]);
        if let Some(&bad) = row.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::arg(format!("token id {bad} outside the vocabulary")));
        }
        let mut t = Tape::inference(&self.params);
        let (enc, s) = self.encode_batch(&mut t, &[row], None)?;
        let states = t.tensor(enc);
        let d = self.config.d_model;
        Ok(EncoderOutput {
            states: Tensor::new(vec![s, d], states.into_data())?,
            truncated,
        })
    }

    /// Source ids with BUG_OPEN / BUG_CLOSE around `span`.
    pub fn with_location(src_ids: &[usize], span: Range<usize>) -> Result<Vec<usize>> {
        if span.start > span.end || span.end > src_ids.len() {
            return Err(Error::arg(format!(
                "location {}..{} outside a source of {} tokens",
                span.start,
                span.end,
                src_ids.len()
            )));
        }
        let mut ids = Vec::with_capacity(src_ids.len() + 2);
        ids.extend_from_slice(&src_ids[..span.start]);
        ids.push(vocab::BUG_OPEN);
        ids.extend_from_slice(&src_ids[span.clone()]);
        ids.push(vocab::BUG_CLOSE);
        ids.extend_from_slice(&src_ids[span.end..]);
        Ok(ids)
    }

    pub fn encode_with_location(&self, src_ids: &[usize], span: Range<usize>) -> Result<EncoderOutput<T>> {
        self.encode(&Self::with_location(src_ids, span)?)
    }

    /// Per-token bug logits for encoder token rows `[N, d]`.
    pub fn head_bug(&self, e_tokens: &Tensor<T>) -> Result<Vec<T>> {
        let mut t = Tape::inference(&self.params);
        let x = t.leaf(e_tokens.clone().with_requires_grad(false));
        let y = self.mlp(&mut t, x, &self.layout.bug_head)?;
        Ok(t.value(y).to_vec())
    }

    /// Bug-type logits for one CLS state.
    pub fn head_type(&self, e_cls: &[T]) -> Result<Vec<T>> {
        let mut t = Tape::inference(&self.params);
        let x = t.constant(vec![1, e_cls.len()], e_cls.to_vec())?;
        let y = self.mlp(&mut t, x, &self.layout.type_head)?;
        Ok(t.value(y).to_vec())
    }

    /// Greedy decoding from START; stops at END or after `max_len` tokens.
    /// The END token is not included.
    pub fn generate(&self, enc: &EncoderOutput<T>, max_len: usize) -> Result<Vec<usize>> {
        let limit = max_len.min(self.config.max_tgt_len - 1);
        let s = enc.states.shape()[0];
        let mut prefix = vec![vocab::START];
        let mut out = Vec::new();
        while out.len() < limit {
            let mut t = Tape::inference(&self.params);
            let states = t.constant(vec![1, s, self.config.d_model], enc.states.data().to_vec())?;
            let (logits, k) = self.decode_batch(&mut t, states, &[s], std::slice::from_ref(&prefix), None)?;
            let v = self.config.vocab_size;
            let last = &t.value(logits)[(k - 1) * v..k * v];
            let mut best = 0;
            for (i, &x) in last.iter().enumerate() {
                if x > last[best] {
                    best = i;
                }
            }
            if best == vocab::END {
                break;
            }
            out.push(best);
            prefix.push(best);
        }
        Ok(out)
    }

    /// Runs the encoder, both heads and greedy decoding. With `location`,
    /// sentinels surround that token span and their rows are dropped from
    /// the token probabilities.
    pub fn predict(&self, src_ids: &[usize], location: Option<Range<usize>>, max_len: usize) -> Result<Prediction<T>> {
        let enc = match &location {
            Some(span) => self.encode_with_location(src_ids, span.clone())?,
            None => self.encode(src_ids)?,
        };
        let d = self.config.d_model;
        let rows = Tensor::new(vec![enc.n_tokens(), d], enc.e_tokens().to_vec())?;
        let logits = self.head_bug(&rows)?;
        let mut probs: Vec<T> = logits.iter().map(|&x| sigmoid(x)).collect();
        if let Some(span) = &location {
            let close = span.end + 1;
            probs = probs
                .into_iter()
                .enumerate()
                .filter(|&(i, _)| i != span.start && i != close)
                .map(|(_, p)| p)
                .collect();
        }
        probs.resize(src_ids.len(), T::zero());
        let type_probs = softmax(&self.head_type(enc.e_cls())?);
        let generated = self.generate(&enc, max_len)?;
        Ok(Prediction {
            token_bug_probs: probs,
            type_probs,
            generated,
            truncated: enc.truncated,
        })
    }

    // ---- persistence -------------------------------------------------------

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "hlsdbg-model",
            "config": self.config,
            "vocab": self.vocab,
        }));
        for (name, tensor) in self.params.iter() {
            c.push(name, tensor);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = &c.metadata;
        let config: ModelConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        let vocab: Vocab = serde_json::from_value(meta["vocab"].clone())
            .map_err(|e| Error::Config(format!("checkpoint vocabulary: {e}")))?;
        let mut model = Model::new(config, vocab, 0)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let loaded: Tensor<T> = c.tensor(&name)?;
            let slot = model.params.get_mut(id);
            if loaded.shape() != slot.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    loaded.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(loaded.data());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
