use std::borrow::Cow;

use super::{numel, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        batch: usize,
        shared_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        a: Var,
    },
    AttentionMask {
        a: Var,
        keep: Vec<bool>,
        scale: T,
        heads: usize,
    },
    Sum {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    WeightedBce {
        logits: Var,
        labels: Vec<T>,
        weights: Vec<T>,
        total_weight: T,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => Vec::new(),
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Scale { a, .. }
            | Op::Permute { a, .. }
            | Op::Reshape { a }
            | Op::Slice { a, .. }
            | Op::Softmax { a, .. }
            | Op::Gelu { a }
            | Op::AttentionMask { a, .. }
            | Op::Sum { a } => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Embedding { table, .. } => vec![*table],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } | Op::WeightedBce { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'p, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'p, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the computation.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    store: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    frozen: bool,
}

impl<'p, T: Real> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    // Innermost output axis is walked in a tight loop.
    let last = rank - 1;
    loop {
        let s = strides[last];
        for j in 0..out_shape[last] {
            out.push(data[offset + j * s]);
        }
        let mut d = last;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    // tanh approximation
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x);
    (y, dy)
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            store: None,
            param_vars: Vec::new(),
            frozen: false,
        }
    }

    /// Tape whose parameter leaves borrow from `store`.
    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Tape {
            nodes: Vec::new(),
            store: Some(store),
            param_vars: vec![None; store.len()],
            frozen: false,
        }
    }

    /// Like [`Tape::with_params`], but parameters are treated as constants so
    /// nothing is kept for a backward pass.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Tape {
            frozen: true,
            ..Self::with_params(store)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        // Ops without differentiable inputs are stored as constants.
        let op = if requires_grad { op } else { Op::Leaf { param: None } };
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it requires grad iff the tensor does.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(tensor.into_data()),
            op: Op::Leaf { param: None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf { param: Some(id) },
            requires_grad: t.requires_grad() && !self.frozen,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    // ---- primitives -------------------------------------------------------

    /// Matrix product. Supports `[.., m, k] x [k, n]` (shared right operand)
    /// and batched `[b, m, k] x [b, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a x b^T`, with `b` laid out as `[n, k]` or `[b, n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let k = sa[sa.len() - 1];
        let (bk, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if bk != k {
            return Err(mismatch());
        }
        let (batch, m, shared_b, out_shape) = if sb.len() == 2 {
            let m = numel(&sa[..sa.len() - 1]);
            let mut out = sa[..sa.len() - 1].to_vec();
            out.push(n);
            (1, m, true, out)
        } else if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] {
            (sa[0], sa[1], false, vec![sa[0], sa[1], n])
        } else {
            return Err(mismatch());
        };
        let mut out = vec![T::zero(); batch * m * n];
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        {
            let av = self.value(a);
            let bv = self.value(b);
            for bi in 0..batch {
                let b_off = if shared_b { 0 } else { bi * k * n };
                // SAFETY: offsets and strides stay within the checked buffers.
                unsafe {
                    T::gemm(
                        m,
                        k,
                        n,
                        av.as_ptr().add(bi * m * k),
                        k as isize,
                        1,
                        bv.as_ptr().add(b_off),
                        rsb,
                        csb,
                        T::zero(),
                        out.as_mut_ptr().add(bi * m * n),
                        n as isize,
                        1,
                    );
                }
            }
        }
        Ok(self.push(
            out_shape,
            out,
            Op::MatMul {
                a,
                b,
                trans_b,
                batch,
                shared_b,
                m,
                k,
                n,
            },
        ))
    }

    fn check_suffix(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(numel(sb))
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let inner = self.check_suffix("add", a, b)?;
        let bv = self.value(b);
        let out: Vec<T> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % inner.max(1)])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add { a, b }))
    }

    /// Elementwise product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let inner = self.check_suffix("mul", a, b)?;
        let bv = self.value(b);
        let out: Vec<T> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv[i % inner.max(1)])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale { a, factor })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape {
                op: "permute",
                lhs: shape,
                rhs: perm.to_vec(),
            });
        }
        let out = permute_data(self.value(a), &shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.push(
            out_shape,
            out,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let rank = self.shape(a).len();
        if d0 >= rank || d1 >= rank {
            return Err(Error::Shape {
                op: "transpose",
                lhs: self.shape(a).to_vec(),
                rhs: vec![d0, d1],
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(d0, d1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape { a }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape {
                op: "concat",
                lhs: base,
                rhs: vec![axis],
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let v = self.value(p);
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: shape,
                rhs: vec![axis, start, len],
            });
        }
        let (outer, alen, inner) = split_at_axis(&shape, axis);
        let v = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(out_shape, out, Op::Slice { a, axis, start }))
    }

    /// Gathers rows of a 2-D table: output is `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "embedding",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (rows, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::arg(format!("embedding id {bad} out of range for {rows} rows")));
        }
        let v = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&v[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let v = self.value(a);
        let mut out = vec![T::zero(); v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| v[at(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (v[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { a, axis }))
    }

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::arg("layer_norm of a scalar"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).expect("dimension fits");
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu_parts(x).0).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Gelu { a })
    }

    /// Scales attention scores `[groups, q, k]` and pushes masked entries to
    /// a large negative value. `keep` is `[groups / heads, q, k]`, shared by
    /// the `heads` consecutive groups of one batch element.
    pub fn attention_mask(&mut self, scores: Var, keep: &[bool], scale: f64, heads: usize) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        if shape.len() != 3 || heads == 0 || shape[0] % heads != 0 || keep.len() * heads != numel(&shape) {
            return Err(Error::Shape {
                op: "attention_mask",
                lhs: shape,
                rhs: vec![keep.len(), heads],
            });
        }
        let plane = shape[1] * shape[2];
        let scale = T::from_f64_lossy(scale);
        let fill = T::from_f64_lossy(-1e9);
        let out = self
            .value(scores)
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let g = i / plane;
                if keep[(g / heads) * plane + i % plane] {
                    s * scale
                } else {
                    fill
                }
            })
            .collect();
        Ok(self.push(
            shape,
            out,
            Op::AttentionMask {
                a: scores,
                keep: keep.to_vec(),
                scale,
                heads,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(Vec::new(), vec![s], Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len().max(1)).expect("length fits");
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// `sum_i w_i * -log softmax(logits_i)[targets_i]` over rows of `[n, c]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() || weights.len() != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len(), weights.len()],
            });
        }
        let c = shape[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::arg(format!("class label {t} out of range for {c} classes")));
        }
        let v = self.value(logits);
        let mut probs = vec![T::zero(); v.len()];
        let mut loss = T::zero();
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            let row = &v[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            if w != T::zero() {
                loss += w * (lse - row[t]);
            }
        }
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        ))
    }

    /// `sum_i w_i * bce(sigmoid(x_i), y_i) / sum_i w_i`.
    pub fn weighted_bce_with_logits(&mut self, logits: Var, labels: &[T], weights: &[T]) -> Result<Var> {
        let n = self.value(logits).len();
        if labels.len() != n || weights.len() != n {
            return Err(Error::Shape {
                op: "weighted_bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![labels.len(), weights.len()],
            });
        }
        let total_weight: T = weights.iter().copied().sum();
        if total_weight <= T::zero() {
            return Err(Error::arg("binary cross-entropy over zero total weight"));
        }
        let v = self.value(logits);
        let mut acc = T::zero();
        for i in 0..n {
            let x = v[i];
            let per = x.max(T::zero()) - x * labels[i] + (T::one() + (-x.abs()).exp()).ln();
            acc += weights[i] * per;
        }
        Ok(self.push(
            Vec::new(),
            vec![acc / total_weight],
            Op::WeightedBce {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                total_weight,
            },
        ))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Back-propagates from the scalar `loss` to every leaf requiring grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        let mut leaves = Vec::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { entries: leaves });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf { param } = node.op {
                leaves.push((Var(i), param, g));
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        leaves.reverse();
        Ok(Gradients { entries: leaves })
    }

    fn backprop_node(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        fn buf<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }
        let len = |v: Var| nodes[v.0].value.len();

        match &node.op {
            Op::Leaf { .. } => {}
            &Op::MatMul {
                a,
                b,
                trans_b,
                batch,
                shared_b,
                m,
                k,
                n,
            } => {
                let av = self.value(a);
                let bv = self.value(b);
                // strides of the logical [k, n] right operand
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                if wants(a) {
                    let ga = buf(grads, a, len(a));
                    for bi in 0..batch {
                        let b_off = if shared_b { 0 } else { bi * k * n };
                        // dA = dC * B^T
                        unsafe {
                            T::gemm(
                                m,
                                n,
                                k,
                                g.as_ptr().add(bi * m * n),
                                n as isize,
                                1,
                                bv.as_ptr().add(b_off),
                                csb,
                                rsb,
                                T::one(),
                                ga.as_mut_ptr().add(bi * m * k),
                                k as isize,
                                1,
                            );
                        }
                    }
                }
                if wants(b) {
                    let gb = buf(grads, b, len(b));
                    for bi in 0..batch {
                        let b_off = if shared_b { 0 } else { bi * k * n };
                        // dB = A^T * dC, written through B's layout
                        unsafe {
                            T::gemm(
                                k,
                                m,
                                n,
                                av.as_ptr().add(bi * m * k),
                                1,
                                k as isize,
                                g.as_ptr().add(bi * m * n),
                                n as isize,
                                1,
                                T::one(),
                                gb.as_mut_ptr().add(b_off),
                                rsb,
                                csb,
                            );
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                if wants(a) {
                    buf(grads, a, len(a)).iter_mut().zip(g).for_each(|(x, &d)| *x += d);
                }
                if wants(b) {
                    let inner = len(b).max(1);
                    let gb = buf(grads, b, len(b));
                    for (i, &d) in g.iter().enumerate() {
                        gb[i % inner] += d;
                    }
                }
            }
            &Op::Mul { a, b } => {
                let av = self.value(a);
                let bv = self.value(b);
                let inner = bv.len().max(1);
                if wants(a) {
                    let ga = buf(grads, a, av.len());
                    for (i, &d) in g.iter().enumerate() {
                        ga[i] += d * bv[i % inner];
                    }
                }
                if wants(b) {
                    let gb = buf(grads, b, bv.len());
                    for (i, &d) in g.iter().enumerate() {
                        gb[i % inner] += d * av[i];
                    }
                }
            }
            &Op::Scale { a, factor } => {
                buf(grads, a, len(a))
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, &d)| *x += d * factor);
            }
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = permute_data(g, &node.shape, &inv);
                buf(grads, *a, back.len())
                    .iter_mut()
                    .zip(back)
                    .for_each(|(x, d)| *x += d);
            }
            &Op::Reshape { a } => {
                buf(grads, a, len(a)).iter_mut().zip(g).for_each(|(x, &d)| *x += d);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_at_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let plen = nodes[p.0].shape[*axis];
                    if wants(p) {
                        let gp = buf(grads, p, len(p));
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * plen * inner;
                            for j in 0..plen * inner {
                                gp[dst + j] += g[src + j];
                            }
                        }
                    }
                    offset += plen;
                }
            }
            &Op::Slice { a, axis, start } => {
                let in_shape = &nodes[a.0].shape;
                let (outer, alen, inner) = split_at_axis(in_shape, axis);
                let slen = node.shape[axis];
                let ga = buf(grads, a, len(a));
                for o in 0..outer {
                    let dst = (o * alen + start) * inner;
                    let src = o * slen * inner;
                    for j in 0..slen * inner {
                        ga[dst + j] += g[src + j];
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].shape[1];
                let gt = buf(grads, *table, len(*table));
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g[r * d + j];
                    }
                }
            }
            &Op::Softmax { a, axis } => {
                let y = &node.value;
                let (outer, alen, inner) = split_at_axis(&node.shape, axis);
                let ga = buf(grads, a, y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * alen + j) * inner + i;
                        let dot: T = (0..alen).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..alen {
                            ga[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().expect("rank >= 1");
                let rows = xhat.len() / d.max(1);
                let gv = self.value(*gamma);
                if wants(*gamma) {
                    let gg = buf(grads, *gamma, d);
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if wants(*beta) {
                    let gb = buf(grads, *beta, d);
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if wants(*x) {
                    let dn = T::from_usize(d).expect("dimension fits");
                    let gx = buf(grads, *x, xhat.len());
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..d {
                            let v = g[r * d + j] * gv[j];
                            dxhat[j] = v;
                            mean_d += v;
                            mean_dx += v * xhat[r * d + j];
                        }
                        mean_d /= dn;
                        mean_dx /= dn;
                        for j in 0..d {
                            gx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                }
            }
            &Op::Gelu { a } => {
                let av = self.value(a);
                let ga = buf(grads, a, av.len());
                for (i, &x) in av.iter().enumerate() {
                    ga[i] += g[i] * gelu_parts(x).1;
                }
            }
            Op::AttentionMask { a, keep, scale, heads } => {
                let plane = node.shape[1] * node.shape[2];
                let ga = buf(grads, *a, g.len());
                for (i, &d) in g.iter().enumerate() {
                    let grp = i / plane;
                    if keep[(grp / heads) * plane + i % plane] {
                        ga[i] += d * *scale;
                    }
                }
            }
            &Op::Sum { a } => {
                let d = g[0];
                buf(grads, a, len(a)).iter_mut().for_each(|x| *x += d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let c = nodes[logits.0].shape[1];
                let up = g[0];
                let gl = buf(grads, *logits, probs.len());
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    for j in 0..c {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        gl[r * c + j] += up * w * (probs[r * c + j] - onehot);
                    }
                }
            }
            Op::WeightedBce {
                logits,
                labels,
                weights,
                total_weight,
            } => {
                let xv = self.value(*logits);
                let up = g[0] / *total_weight;
                let gl = buf(grads, *logits, xv.len());
                for i in 0..xv.len() {
                    let s = T::one() / (T::one() + (-xv[i]).exp());
                    gl[i] += up * weights[i] * (s - labels[i]);
                }
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    entries: Vec<(Var, Option<ParamId>, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.entries
            .iter()
            .find(|(var, _, _)| *var == v)
            .map(|(_, _, g)| g.as_slice())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.entries
            .iter()
            .find(|(_, p, _)| *p == Some(id))
            .map(|(_, _, g)| g.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.entries
            .iter()
            .filter_map(|(_, p, g)| p.map(|p| (p, g.as_slice())))
    }

    /// Adds parameter gradients into the store's grad slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, g) in self.params() {
            store.get_mut(id).accumulate_grad(g)?;
        }
        Ok(())
    }
}
