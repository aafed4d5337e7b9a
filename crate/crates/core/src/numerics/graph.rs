//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every [`Parameter`](super::Parameter) that was read through
//! [`Graph::param`]. Parameters that never reach the loss get a zero gradient
//! once accumulated into the store.

use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    RepeatRow(Var),
    SliceRows(Var, usize),
    StraightThrough(Var),
    SmoothL1(Var, Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
}

/// Geometry of a 1-D (transposed) convolution over a `[time, channels]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_len: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn conv_out_len(&self) -> Option<usize> {
        let padded = self.in_len + 2 * self.padding;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    pub fn transposed_out_len(&self) -> Option<usize> {
        if self.in_len == 0 || self.stride == 0 {
            return None;
        }
        ((self.in_len - 1) * self.stride + self.kernel).checked_sub(2 * self.padding)
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of the parameters read during a forward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    /// Adds another gradient set into this one, in parameter order.
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.by_param {
            match self.by_param.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.by_param.insert(id, g);
                }
            }
        }
    }
}

/// A recorded forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::shape(op, "[rows, cols]", other)),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Reads a parameter's current value onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", [k, n], [k2, n]));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// `x[n, c] + bias[c]` applied to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, c) = dims2(self.value(x), "add_bias")?;
        if self.value(bias).shape() != [c] {
            return Err(Error::shape("add_bias", [c], self.value(bias).shape()));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for i in 0..n {
            for (o, bv) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(self.value(a), self.value(b), op)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.value(a).shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu_value);
        self.push(t, Op::Gelu(x))
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (n, c) = dims2(self.value(x), "softmax")?;
        let mut out = self.value(x).clone();
        for i in 0..n {
            softmax_in_place(&mut out.data_mut()[i * c..(i + 1) * c]);
        }
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of shape `[cols]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, c) = dims2(self.value(x), "layer_norm")?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape("layer_norm", [c], self.value(p).shape()));
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * c];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::matrix(n, c, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Gathers rows `ids` of `table[V, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = dims2(self.value(table), "embedding")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::invalid(format!(
                    "embedding id {id} at position {pos} outside table of {vocab} rows"
                )));
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let t = Tensor::matrix(ids.len(), d, out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// 1-D convolution. `x` is `[time, in_ch]`, `w` is `[kernel * in_ch, out_ch]`
    /// (row index `j * in_ch + c` for tap `j`, input channel `c`), `b` is `[out_ch]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (t, cin) = dims2(self.value(x), "conv1d")?;
        let (wr, cout) = dims2(self.value(w), "conv1d")?;
        if wr != kernel * cin {
            return Err(Error::shape("conv1d", [kernel * cin, cout], [wr, cout]));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::shape("conv1d", [cout], self.value(b).shape()));
        }
        let geom = ConvGeom {
            in_len: t,
            in_ch: cin,
            out_ch: cout,
            kernel,
            stride,
            padding,
        };
        let tout = geom
            .conv_out_len()
            .ok_or_else(|| Error::shape("conv1d", format!("time >= {}", kernel.saturating_sub(2 * padding)), t))?;
        let xv = self.value(x).data();
        let kc = kernel * cin;
        let mut cols = vec![0.0; tout * kc];
        for o in 0..tout {
            for j in 0..kernel {
                let src = (o * stride + j) as isize - padding as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                let src = src as usize;
                cols[o * kc + j * cin..o * kc + (j + 1) * cin].copy_from_slice(&xv[src * cin..(src + 1) * cin]);
            }
        }
        let mut out = matmul(&cols, self.value(w).data(), tout, kc, cout);
        let bv = self.value(b).data();
        for o in 0..tout {
            for (y, bb) in out[o * cout..(o + 1) * cout].iter_mut().zip(bv) {
                *y += bb;
            }
        }
        let t = Tensor::matrix(tout, cout, out)?;
        Ok(self.push(t, Op::Conv1d { x, w, b, geom, cols }))
    }

    /// Transposed 1-D convolution. `x` is `[time, in_ch]`, `w` is
    /// `[in_ch, kernel * out_ch]` (column `j * out_ch + c`), `b` is `[out_ch]`.
    /// Output length is `(time - 1) * stride + kernel - 2 * padding`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (t, cin) = dims2(self.value(x), "conv_transpose1d")?;
        let (wr, wc) = dims2(self.value(w), "conv_transpose1d")?;
        if wr != cin || wc % kernel != 0 {
            return Err(Error::shape(
                "conv_transpose1d",
                format!("[{cin}, kernel*out_ch]"),
                [wr, wc],
            ));
        }
        let cout = wc / kernel;
        if self.value(b).shape() != [cout] {
            return Err(Error::shape("conv_transpose1d", [cout], self.value(b).shape()));
        }
        let geom = ConvGeom {
            in_len: t,
            in_ch: cin,
            out_ch: cout,
            kernel,
            stride,
            padding,
        };
        let lout = geom
            .transposed_out_len()
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::shape("conv_transpose1d", "non-empty output", t))?;
        let full = matmul(self.value(x).data(), self.value(w).data(), t, cin, wc);
        let mut out = vec![0.0; lout * cout];
        for i in 0..t {
            for j in 0..kernel {
                let dst = (i * stride + j) as isize - padding as isize;
                if dst < 0 || dst as usize >= lout {
                    continue;
                }
                let dst = dst as usize;
                for c in 0..cout {
                    out[dst * cout + c] += full[i * wc + j * cout + c];
                }
            }
        }
        let bv = self.value(b).data();
        for o in 0..lout {
            for (y, bb) in out[o * cout..(o + 1) * cout].iter_mut().zip(bv) {
                *y += bb;
            }
        }
        let tt = Tensor::matrix(lout, cout, out)?;
        Ok(self.push(tt, Op::ConvTranspose1d { x, w, b, geom }))
    }

    /// Multi-head scaled dot-product attention over `[n, d]` projections.
    /// With `causal`, position `i` attends to positions `<= i` only
    /// (additive -inf mask before the softmax).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (n, d) = dims2(self.value(q), "attention")?;
        same_shape(self.value(q), self.value(k), "attention")?;
        same_shape(self.value(q), self.value(v), "attention")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!("width {d} not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let qi = &qv[i * d + h * dh..i * d + (h + 1) * dh];
                let row = &mut p[i * n..(i + 1) * n];
                for j in 0..n {
                    row[j] = if causal && j > i {
                        f64::NEG_INFINITY
                    } else {
                        let kj = &kv[j * d + h * dh..j * d + (h + 1) * dh];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    };
                }
                softmax_in_place(row);
                let orow = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..n {
                    let pij = row[j];
                    if pij == 0.0 {
                        continue;
                    }
                    let vj = &vv[j * d + h * dh..j * d + (h + 1) * dh];
                    for (o, x) in orow.iter_mut().zip(vj) {
                        *o += pij * x;
                    }
                }
            }
        }
        let t = Tensor::matrix(n, d, out)?;
        Ok(self.push(t, Op::Attention { q, k, v, heads, probs }))
    }

    /// Stacks 2-D tensors with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let (_, c) = dims2(self.value(*first), "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c2) = dims2(self.value(p), "concat_rows")?;
            if c2 != c {
                return Err(Error::shape("concat_rows", [r, c], [r, c2]));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::matrix(rows, c, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]`
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = dims2(self.value(a), "concat_cols")?;
        let (n2, cb) = dims2(self.value(b), "concat_cols")?;
        if n != n2 {
            return Err(Error::shape("concat_cols", [n, cb], [n2, cb]));
        }
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let t = Tensor::matrix(n, ca + cb, data)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    /// Repeats a `[d]` or `[1, d]` vector into `[n, d]`.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var> {
        let d = match self.value(x).shape() {
            [d] | [1, d] => *d,
            other => return Err(Error::shape("repeat_row", "[d] or [1, d]", other)),
        };
        let row = self.value(x).data().to_vec();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        let t = Tensor::matrix(n, d, data)?;
        Ok(self.push(t, Op::RepeatRow(x)))
    }

    /// Rows `[start, end)` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = dims2(self.value(x), "slice_rows")?;
        if start >= end || end > n {
            return Err(Error::shape("slice_rows", format!("rows {start}..{end}"), [n, c]));
        }
        let t = Tensor::matrix(end - start, c, self.value(x).data()[start * c..end * c].to_vec())?;
        Ok(self.push(t, Op::SliceRows(x, start)))
    }

    /// Forward value `quantized`, gradient passed to `z` unchanged.
    pub fn straight_through(&mut self, z: Var, quantized: Tensor) -> Result<Var> {
        if quantized.shape() != self.value(z).shape() {
            return Err(Error::shape(
                "straight_through",
                self.value(z).shape(),
                quantized.shape(),
            ));
        }
        Ok(self.push(quantized, Op::StraightThrough(z)))
    }

    /// Mean smooth-L1 (Huber, beta = 1) between `pred` and `target`.
    pub fn smooth_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape(self.value(pred), self.value(target), "smooth_l1")?;
        let n = self.value(pred).len().max(1) as f64;
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| {
                let d = (p - t).abs();
                if d < 1.0 {
                    0.5 * d * d
                } else {
                    d - 0.5
                }
            })
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::SmoothL1(pred, target)))
    }

    /// Mean squared error.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mse")?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    /// Mean token cross-entropy (nats) of row-wise `logits[n, V]` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, vocab) = dims2(self.value(logits), "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", n, targets.len()));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= vocab {
                return Err(Error::invalid(format!(
                    "target {t} at row {i} outside vocabulary {vocab}"
                )));
            }
            let row = &mut probs[i * vocab..(i + 1) * vocab];
            let lse = log_sum_exp(row);
            loss += lse - row[t];
            softmax_in_place(row);
        }
        let denom = n.max(1) as f64;
        Ok(self.push(
            Tensor::scalar(loss / denom),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.value(x).sum() / n;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Column means of a 2-D tensor, `[n, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, c) = dims2(self.value(x), "mean_rows")?;
        let mut out = vec![0.0; c];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(self.value(x).row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n.max(1) as f64);
        let t = Tensor::matrix(1, c, out)?;
        Ok(self.push(t, Op::MeanRows(x)))
    }

    /// Back-propagates from a scalar `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape("backward", "scalar loss", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match out.by_param.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.by_param.insert(*id, g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(self.value(*a), "matmul")?;
                    let n = self.value(*b).cols();
                    let da = matmul_nt(g.data(), self.value(*b).data(), m, n, k);
                    let db = matmul_tn(self.value(*a).data(), g.data(), m, k, n);
                    accumulate(&mut grads, *a, Tensor::matrix(m, k, da)?);
                    accumulate(&mut grads, *b, Tensor::matrix(k, n, db)?);
                }
                Op::AddBias(x, b) => {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for i in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::new(vec![c], db)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |gv, bv| gv * bv);
                    let gb = zip_map(&g, self.value(*a), |gv, av| gv * av);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.map(|v| v * s)),
                Op::Relu(x) => {
                    let gx = zip_map(&g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let gx = zip_map(&g, self.value(*x), |gv, xv| gv * gelu_grad(xv));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut gx = vec![0.0; y.len()];
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(y.shape().to_vec(), gx)?);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, c) = dims2(&g, "layer_norm")?;
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dx = vec![0.0; n * c];
                    for i in 0..n {
                        let gr = g.row(i);
                        let xh = &xhat[i * c..(i + 1) * c];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..c {
                            dgamma[j] += gr[j] * xh[j];
                            dbeta[j] += gr[j];
                            let dxh = gr[j] * gam[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= c as f64;
                        mean_dxh_xh /= c as f64;
                        for j in 0..c {
                            let dxh = gr[j] * gam[j];
                            dx[i * c + j] = inv_std[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *gamma, Tensor::new(vec![c], dgamma)?);
                    accumulate(&mut grads, *beta, Tensor::new(vec![c], dbeta)?);
                    accumulate(&mut grads, *x, Tensor::matrix(n, c, dx)?);
                }
                Op::Embedding { table, ids } => {
                    let shape = self.value(*table).shape().to_vec();
                    let mut dt = Tensor::zeros(&shape);
                    for (pos, &id) in ids.iter().enumerate() {
                        for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(pos)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::Conv1d { x, w, b, geom, cols } => {
                    let tout = g.rows();
                    let kc = geom.kernel * geom.in_ch;
                    let cout = geom.out_ch;
                    let dw = matmul_tn(cols, g.data(), tout, kc, cout);
                    let dcols = matmul_nt(g.data(), self.value(*w).data(), tout, cout, kc);
                    let mut dx = vec![0.0; geom.in_len * geom.in_ch];
                    for o in 0..tout {
                        for j in 0..geom.kernel {
                            let src = (o * geom.stride + j) as isize - geom.padding as isize;
                            if src < 0 || src as usize >= geom.in_len {
                                continue;
                            }
                            let src = src as usize;
                            for c in 0..geom.in_ch {
                                dx[src * geom.in_ch + c] += dcols[o * kc + j * geom.in_ch + c];
                            }
                        }
                    }
                    let db = column_sums(&g);
                    accumulate(&mut grads, *w, Tensor::matrix(kc, cout, dw)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![cout], db)?);
                    accumulate(&mut grads, *x, Tensor::matrix(geom.in_len, geom.in_ch, dx)?);
                }
                Op::ConvTranspose1d { x, w, b, geom } => {
                    let lout = g.rows();
                    let cout = geom.out_ch;
                    let wc = geom.kernel * cout;
                    let t = geom.in_len;
                    let mut dfull = vec![0.0; t * wc];
                    for i in 0..t {
                        for j in 0..geom.kernel {
                            let dst = (i * geom.stride + j) as isize - geom.padding as isize;
                            if dst < 0 || dst as usize >= lout {
                                continue;
                            }
                            let dst = dst as usize;
                            dfull[i * wc + j * cout..i * wc + (j + 1) * cout]
                                .copy_from_slice(&g.data()[dst * cout..(dst + 1) * cout]);
                        }
                    }
                    let dx = matmul_nt(&dfull, self.value(*w).data(), t, wc, geom.in_ch);
                    let dw = matmul_tn(self.value(*x).data(), &dfull, t, geom.in_ch, wc);
                    let db = column_sums(&g);
                    accumulate(&mut grads, *w, Tensor::matrix(geom.in_ch, wc, dw)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![cout], db)?);
                    accumulate(&mut grads, *x, Tensor::matrix(t, geom.in_ch, dx)?);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (n, d) = dims2(&g, "attention")?;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (qv, kv, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                    let mut dq = vec![0.0; n * d];
                    let mut dk = vec![0.0; n * d];
                    let mut dv = vec![0.0; n * d];
                    let mut dp = vec![0.0; n];
                    for h in 0..*heads {
                        let p = &probs[h * n * n..(h + 1) * n * n];
                        let off = h * dh;
                        for i in 0..n {
                            let go = &g.data()[i * d + off..i * d + off + dh];
                            let prow = &p[i * n..(i + 1) * n];
                            let mut dot = 0.0;
                            for j in 0..n {
                                let vj = &vv[j * d + off..j * d + off + dh];
                                dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                dot += dp[j] * prow[j];
                                if prow[j] != 0.0 {
                                    for (t, gv) in dv[j * d + off..j * d + off + dh].iter_mut().zip(go) {
                                        *t += prow[j] * gv;
                                    }
                                }
                            }
                            for j in 0..n {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[i * d + off + c] += ds * kv[j * d + off + c];
                                    dk[j * d + off + c] += ds * qv[i * d + off + c];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, Tensor::matrix(n, d, dq)?);
                    accumulate(&mut grads, *k, Tensor::matrix(n, d, dk)?);
                    accumulate(&mut grads, *v, Tensor::matrix(n, d, dv)?);
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut start = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        let slice = g.data()[start * c..(start + r) * c].to_vec();
                        accumulate(&mut grads, *p, Tensor::matrix(r, c, slice)?);
                        start += r;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let n = g.rows();
                    let mut ga = Vec::with_capacity(n * ca);
                    let mut gb = Vec::with_capacity(n * cb);
                    for i in 0..n {
                        let r = g.row(i);
                        ga.extend_from_slice(&r[..ca]);
                        gb.extend_from_slice(&r[ca..]);
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(n, ca, ga)?);
                    accumulate(&mut grads, *b, Tensor::matrix(n, cb, gb)?);
                }
                Op::RepeatRow(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let sums = column_sums(&g);
                    accumulate(&mut grads, *x, Tensor::new(shape, sums)?);
                }
                Op::SliceRows(x, start) => {
                    let (n, c) = dims2(self.value(*x), "slice_rows")?;
                    let mut full = vec![0.0; n * c];
                    full[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, Tensor::matrix(n, c, full)?);
                }
                Op::StraightThrough(z) => accumulate(&mut grads, *z, g),
                Op::SmoothL1(p, t) => {
                    let n = self.value(*p).len().max(1) as f64;
                    let s = g.data()[0] / n;
                    let gp = zip_map(self.value(*p), self.value(*t), |a, b| {
                        let d = a - b;
                        s * if d.abs() < 1.0 { d } else { d.signum() }
                    });
                    accumulate(&mut grads, *t, gp.map(|v| -v));
                    accumulate(&mut grads, *p, gp);
                }
                Op::Mse(a, b) => {
                    let n = self.value(*a).len().max(1) as f64;
                    let s = 2.0 * g.data()[0] / n;
                    let ga = zip_map(self.value(*a), self.value(*b), |x, y| s * (x - y));
                    accumulate(&mut grads, *b, ga.map(|v| -v));
                    accumulate(&mut grads, *a, ga);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let (n, vocab) = dims2(self.value(*logits), "cross_entropy")?;
                    let s = g.data()[0] / n.max(1) as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * s).collect();
                    for (i, &t) in targets.iter().enumerate() {
                        gl[i * vocab + t] -= s;
                    }
                    accumulate(&mut grads, *logits, Tensor::matrix(n, vocab, gl)?);
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), s));
                }
                Op::Mean(x) => {
                    let s = g.data()[0] / self.value(*x).len().max(1) as f64;
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), s));
                }
                Op::MeanRows(x) => {
                    let (n, c) = dims2(self.value(*x), "mean_rows")?;
                    let inv = 1.0 / n.max(1) as f64;
                    let mut gx = Vec::with_capacity(n * c);
                    for _ in 0..n {
                        gx.extend(g.data().iter().map(|v| v * inv));
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(n, c, gx)?);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let mut s = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (a, v) in s.iter_mut().zip(g.row(i)) {
            *a += v;
        }
    }
    s
}

pub(crate) fn gelu_value(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable in-place softmax; `-inf` entries become exactly 0.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_hand_example() {
        let mut g = Graph::new();
        let x = g.constant(mat(4, 1, &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(mat(2, 1, &[1.0, 1.0]));
        let b = g.constant(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = g.conv1d(x, w, b, 2, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv_transpose_shape_rule() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[5, 3]));
        let w = g.constant(Tensor::zeros(&[3, 4 * 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv_transpose1d(x, w, b, 4, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[10, 2]);
    }

    #[test]
    fn layer_norm_hand_example() {
        let mut g = Graph::new();
        let x = g.constant(mat(1, 2, &[1.0, 3.0]));
        let gm = g.constant(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let bt = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = g.layer_norm(x, gm, bt).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("expected") && err.contains("got"), "{err}");
    }

    #[test]
    fn add_never_broadcasts() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn causal_attention_masks_future() {
        let mut g = Graph::new();
        let q = g.constant(mat(3, 2, &[1.0, 0.0, 0.5, 0.5, 0.0, 1.0]));
        let v1 = mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut v2 = v1.clone();
        v2.data_mut()[4] = 100.0;
        let va = g.constant(v1);
        let vb = g.constant(v2);
        let ya = g.attention(q, q, va, 1, true).unwrap();
        let yb = g.attention(q, q, vb, 1, true).unwrap();
        assert_eq!(g.value(ya).row(0), g.value(yb).row(0));
        assert_eq!(g.value(ya).row(1), g.value(yb).row(1));
        assert_ne!(g.value(ya).row(2), g.value(yb).row(2));
    }
}
