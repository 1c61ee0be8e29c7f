//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse sweep.

use rand::Rng;
use rayon::prelude::*;

use super::attention::{self, AttnShape};
use super::kernels::{self, LOGIT_CLAMP};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<u32>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    LogSoftmax(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        qkv: Var,
        probs: Vec<T>,
        drop: Option<Vec<T>>,
        shape: AttnShape,
    },
    Sum(Var),
    Mean(Var),
    WeightedNll {
        logp: Var,
        targets: Vec<u32>,
        weights: Vec<T>,
    },
    WeightedBce {
        logits: Var,
        labels: Vec<T>,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation for one step. Owned by a single worker.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }
}

/// Inverted-dropout multipliers: each entry is 0 with probability `p`
/// (resolved to 2^-32) and `1/(1-p)` otherwise.
fn dropout_mask<T: Scalar, R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    let cut = (p * 4_294_967_296.0).min(u32::MAX as f64) as u32;
    (0..n).map(|_| if rng.gen::<u32>() < cut { T::zero() } else { keep }).collect()
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite activation on tape");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// Gradient accumulated into `v` by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = kernels::gemm(ta.data(), tb.data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`; used for the tied output projection.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(mismatch("matmul_nt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let out = kernels::gemm_nt(ta.data(), tb.data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// Broadcast a length-`n` vector over the rows of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.numel() != tx.cols() {
            return Err(mismatch("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(tb.numel()) {
            kernels::add_into(row, tb.data());
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(t, Op::AddRow(x, bias), ng))
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v * s).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Scale(x, s), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().par_iter().with_min_len(4096).map(|&v| kernels::gelu(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Gelu(x), ng)
    }

    /// Row-wise layer normalization followed by an affine map.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(mismatch("layernorm", tx, self.value(gain)));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = tx.numel() / n;
        let mut xhat = vec![T::zero(); tx.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = T::of(rs);
            for j in 0..n {
                let xh = T::of((row[j].f64() - mean) * rs);
                xhat[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tt = self.value(table);
        let (v, h) = (tt.rows(), tt.cols());
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::TokenOutOfRange { id, vocab: v });
            }
            out.extend_from_slice(tt.row(id as usize));
        }
        let t = Tensor::new(vec![ids.len(), h], out)?;
        let ng = self.ng(table);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = (tx.rows(), tx.cols());
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::PositionOutOfRange { pos: r, len: m });
            }
            out.extend_from_slice(tx.row(r));
        }
        let t = Tensor::new(vec![rows.len(), n], out)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out = kernels::log_softmax_rows(tx.data(), tx.cols());
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::LogSoftmax(x), ng)
    }

    /// Logistic sigmoid with logits clamped to ±30.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out = tx.data().iter().map(|&z| kernels::sigmoid(z)).collect();
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    /// Inverted dropout. `p == 0` records nothing and returns `x`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let tx = self.value(x);
        let mask: Vec<T> = dropout_mask(tx.numel(), p, rng);
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Dropout { x, mask }, ng)
    }

    /// Multi-head self-attention over packed `[q | k | v]` rows of shape
    /// `[batch*seq, 3*hidden]`. Keys with `key_mask == false` get zero weight.
    #[allow(clippy::too_many_arguments)]
    pub fn self_attention<R: Rng>(
        &mut self,
        qkv: Var,
        key_mask: &[bool],
        batch: usize,
        seq: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let tq = self.value(qkv);
        if tq.rows() != batch * seq || !tq.cols().is_multiple_of(3) || key_mask.len() != batch * seq {
            return Err(Error::ShapeMismatch {
                op: "self_attention",
                lhs: tq.shape().to_vec(),
                rhs: vec![batch, seq, heads],
            });
        }
        let hidden = tq.cols() / 3;
        if !hidden.is_multiple_of(heads) {
            return Err(Error::Invalid(format!("hidden {hidden} not divisible by {heads} heads")));
        }
        let shape = AttnShape {
            batch,
            seq,
            heads,
            hidden,
        };
        let drop = (dropout > 0.0).then(|| dropout_mask(batch * heads * seq * seq, dropout, rng));
        let (out, probs) = attention::forward(tq.data(), key_mask, drop.as_deref(), &shape);
        let t = Tensor::new(vec![batch * seq, hidden], out)?;
        let ng = self.ng(qkv);
        Ok(self.push(
            t,
            Op::Attention {
                qkv,
                probs,
                drop,
                shape,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s: f64 = tx.data().iter().map(|v| v.f64()).sum::<f64>() / tx.numel().max(1) as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(T::of(s)), Op::Mean(x), ng)
    }

    /// `−Σ_r w_r · logp[r, target_r]`
    pub fn weighted_nll(&mut self, logp: Var, targets: &[u32], weights: &[T]) -> Result<Var> {
        let tl = self.value(logp);
        if targets.len() != tl.rows() || weights.len() != tl.rows() {
            return Err(Error::ShapeMismatch {
                op: "weighted_nll",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let v = tl.cols();
        let mut acc = 0.0f64;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if t as usize >= v {
                return Err(Error::TokenOutOfRange { id: t, vocab: v });
            }
            acc -= w.f64() * tl.data()[r * v + t as usize].f64();
        }
        let ng = self.ng(logp);
        Ok(self.push(
            Tensor::scalar(T::of(acc)),
            Op::WeightedNll {
                logp,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// `−Σ_r w_r · [y_r log σ(z_r) + (1−y_r) log(1−σ(z_r))]` with `z` clamped to ±30.
    pub fn weighted_bce_logits(&mut self, logits: Var, labels: &[T], weights: &[T]) -> Result<Var> {
        let tz = self.value(logits);
        if labels.len() != tz.numel() || weights.len() != tz.numel() {
            return Err(Error::ShapeMismatch {
                op: "weighted_bce_logits",
                lhs: tz.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let mut acc = 0.0f64;
        for ((&z, &y), &w) in tz.data().iter().zip(labels).zip(weights) {
            if w == T::zero() {
                continue;
            }
            let z = z.f64().clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            let y = y.f64();
            acc += w.f64() * (y * kernels::softplus(-z) + (1.0 - y) * kernels::softplus(z));
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(T::of(acc)),
            Op::WeightedBce {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// Accumulate gradients of the scalar `loss` into every node that needs one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Invalid("backward needs a scalar loss".into()));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, contrib: Vec<T>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => kernels::add_into(existing, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if nodes[a.0].needs_grad {
                    acc(*a, kernels::gemm_nt(g, tb.data(), m, n, k));
                }
                if nodes[b.0].needs_grad {
                    acc(*b, kernels::gemm_tn(ta.data(), g, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                // c = a bᵀ: da = g b, db = gᵀ a
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if nodes[a.0].needs_grad {
                    acc(*a, kernels::gemm(g, tb.data(), m, n, k));
                }
                if nodes[b.0].needs_grad {
                    acc(*b, kernels::gemm_tn(g, ta.data(), m, n, k));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(x, b) => {
                acc(*x, g.to_vec());
                let n = out.cols();
                let mut gb = vec![0.0f64; n];
                for row in g.chunks(n) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v.f64();
                    }
                }
                acc(*b, gb.into_iter().map(T::of).collect());
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|&v| v * *s).collect()),
            Op::Gelu(x) => {
                let tx = &nodes[x.0].value;
                acc(
                    *x,
                    g.par_iter()
                        .with_min_len(4096)
                        .zip(tx.data())
                        .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                        .collect(),
                );
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = out.cols();
                let gn = nodes[gain.0].value.data();
                let mut dgain = vec![0.0f64; n];
                let mut dbias = vec![0.0f64; n];
                let mut dx = vec![T::zero(); g.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = 0.0f64;
                    let mut mean_dx = 0.0f64;
                    for j in 0..n {
                        let d = (gr[j] * gn[j]).f64();
                        mean_d += d;
                        mean_dx += d * xh[j].f64();
                        dgain[j] += (gr[j] * xh[j]).f64();
                        dbias[j] += gr[j].f64();
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    for j in 0..n {
                        let d = (gr[j] * gn[j]).f64();
                        dx[r * n + j] = T::of(rs.f64() * (d - mean_d - xh[j].f64() * mean_dx));
                    }
                }
                acc(*x, dx);
                acc(*gain, dgain.into_iter().map(T::of).collect());
                acc(*bias, dbias.into_iter().map(T::of).collect());
            }
            Op::Gather { table, ids } => {
                if nodes[table.0].needs_grad {
                    let tt = &nodes[table.0].value;
                    let h = tt.cols();
                    let mut dt = vec![T::zero(); tt.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        kernels::add_into(&mut dt[id as usize * h..(id as usize + 1) * h], &g[r * h..(r + 1) * h]);
                    }
                    acc(*table, dt);
                }
            }
            Op::SelectRows { x, rows } => {
                let tx = &nodes[x.0].value;
                let n = tx.cols();
                let mut dx = vec![T::zero(); tx.numel()];
                for (r, &src) in rows.iter().enumerate() {
                    kernels::add_into(&mut dx[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                }
                acc(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let n = out.cols();
                let mut dx = vec![T::zero(); g.len()];
                for ((grow, orow), drow) in g.chunks(n).zip(out.data().chunks(n)).zip(dx.chunks_mut(n)) {
                    let gs: f64 = grow.iter().map(|v| v.f64()).sum();
                    for j in 0..n {
                        drow[j] = T::of(grow[j].f64() - orow[j].f64().exp() * gs);
                    }
                }
                acc(*x, dx);
            }
            Op::Sigmoid(x) => {
                let tx = &nodes[x.0].value;
                let dx = g
                    .iter()
                    .zip(out.data())
                    .zip(tx.data())
                    .map(|((&gv, &s), &z)| {
                        if z.f64().abs() < LOGIT_CLAMP {
                            gv * s * (T::one() - s)
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(*x, dx);
            }
            Op::Dropout { x, mask } => acc(*x, g.iter().zip(mask).map(|(&a, &b)| a * b).collect()),
            Op::Attention {
                qkv,
                probs,
                drop,
                shape,
            } => {
                let tq = &nodes[qkv.0].value;
                acc(*qkv, attention::backward(tq.data(), probs, drop.as_deref(), g, shape));
            }
            Op::Sum(x) => acc(*x, vec![g[0]; nodes[x.0].value.numel()]),
            Op::Mean(x) => {
                let n = nodes[x.0].value.numel();
                acc(*x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::WeightedNll {
                logp,
                targets,
                weights,
            } => {
                let tl = &nodes[logp.0].value;
                let v = tl.cols();
                let mut d = vec![T::zero(); tl.numel()];
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    d[r * v + t as usize] = -w * g[0];
                }
                acc(*logp, d);
            }
            Op::WeightedBce {
                logits,
                labels,
                weights,
            } => {
                let tz = &nodes[logits.0].value;
                let d = tz
                    .data()
                    .iter()
                    .zip(labels)
                    .zip(weights)
                    .map(|((&z, &y), &w)| {
                        if w == T::zero() || z.f64().abs() >= LOGIT_CLAMP {
                            T::zero()
                        } else {
                            w * (kernels::sigmoid(z) - y) * g[0]
                        }
                    })
                    .collect();
                acc(*logits, d);
            }
        }
    }
}
