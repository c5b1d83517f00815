//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive applied to its nodes; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! requires them. The primitive set is deliberately small: it is exactly what
//! the encoder, the MLM head and the contrastive objective are built from.

use super::rng::Rng;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous row range `[start, start + len)` treated as one sequence by
/// [`Graph::attention`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        bias: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: T,
    },
    Gelu {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    SoftmaxRows {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GatherRows {
        a: Var,
        rows: Vec<usize>,
    },
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<T>,
        mask: Option<Vec<T>>,
    },
    SpanMean {
        a: Var,
        spans: Vec<(usize, usize)>,
    },
    NormalizeRows {
        a: Var,
        norms: Vec<T>,
    },
    Sum {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Contrastive {
        sims: Var,
        positives: Vec<usize>,
        inv_tau: T,
        weights: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Gelu { .. } => "gelu",
            Op::Tanh { .. } => "tanh",
            Op::SoftmaxRows { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GatherRows { .. } => "gather_rows",
            Op::Dropout { .. } => "dropout",
            Op::Attention { .. } => "attention",
            Op::SpanMean { .. } => "span_mean",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::Sum { .. } => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Contrastive { .. } => "contrastive",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Numerically stable in-place softmax; accumulates in `f64`.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().unwrap()));
    let mut total = 0.0f64;
    for v in row.iter_mut() {
        let e = (v.to_f64().unwrap() - max).exp();
        total += e;
        *v = T::of(e);
    }
    for v in row.iter_mut() {
        *v = T::of(v.to_f64().unwrap() / total);
    }
}

/// Row-wise softmax of a tensor (over its trailing axis).
pub fn softmax<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    if !t.is_finite() {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let mut out = t.clone();
    let cols = t.cols();
    if cols > 0 {
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
    }
    Ok(out)
}

/// Inverted dropout mask: zero with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut Rng) -> Result<Vec<T>> {
    check_rate(p)?;
    let keep = T::of(1.0 / (1.0 - p));
    Ok((0..len)
        .map(|_| if rng.uniform() < p { T::zero() } else { keep })
        .collect())
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {p}")));
    }
    Ok(())
}

/// Inverted dropout on a plain tensor. Identity when `train` is false or `p == 0`.
pub fn dropout<T: Scalar>(t: &Tensor<T>, p: f64, rng: &mut Rng, train: bool) -> Result<Tensor<T>> {
    check_rate(p)?;
    if !train || p == 0.0 {
        return Ok(t.clone());
    }
    let mask = dropout_mask::<T>(t.len(), p, rng)?;
    let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Tensor::new(t.shape().to_vec(), data)
}

fn f(x: impl num_traits::ToPrimitive) -> f64 {
    x.to_f64().unwrap()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.nodes[v.0].value.shape();
        match s.len() {
            2 => Ok((s[0], s[1])),
            1 => Ok((1, s[0])),
            _ => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    /// `a @ b`, or `a @ b^T` when `trans_b` is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape("matmul", format!("{m}x{k} @ {kb}x{n}")));
        }
        let b_strides = if trans_b { (1, bc) } else { (bc, 1) };
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            b_strides,
            &mut out,
            (n, 1),
            false,
        );
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, trans_b },
            &[a, b],
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::Add { a, b }, &[a, b])
    }

    /// Broadcast-add a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let cols = va.cols();
        if vb.len() != cols {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} for {cols} columns", vb.len()),
            ));
        }
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(vb.data()) {
                *x = *x + b;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::AddRow { a, bias }, &[a, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale { a, c }, &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| {
            let x = f(x);
            T::of(0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
        });
        self.push(t, Op::Gelu { a }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| x.tanh());
        self.push(t, Op::Tanh { a }, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = softmax(self.value(a))?;
        self.push(t, Op::SoftmaxRows { a }, &[a])
    }

    /// Normalize each row to zero mean / unit variance, then scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let cols = vx.cols();
        let rows = vx.len() / cols.max(1);
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(Error::shape("layer_norm", "gamma/beta width mismatch"));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); vx.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().map(|&v| f(v)).sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (f(v) - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = T::of(is);
            for c in 0..cols {
                let h = (f(row[c]) - mean) * is;
                xhat[r * cols + c] = T::of(h);
                out[r * cols + c] = T::of(h * f(g[c]) + f(b[c]));
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Select rows of a matrix (also serves as embedding lookup).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let (n, cols) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::shape("gather_rows", format!("row {r} of {n}")));
            }
            data.extend_from_slice(va.row(r));
        }
        let t = Tensor::new(vec![rows.len(), cols], data)?;
        self.push(
            t,
            Op::GatherRows {
                a,
                rows: rows.to_vec(),
            },
            &[a],
        )
    }

    /// Inverted dropout with the mask drawn from `rng`; identity when not training.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng, train: bool) -> Result<Var> {
        check_rate(p)?;
        if !train || p == 0.0 {
            return Ok(a);
        }
        let mask = dropout_mask::<T>(self.value(a).len(), p, rng)?;
        self.apply_mask(a, mask)
    }

    /// Multiply by a fixed mask; the mask is treated as a constant.
    pub fn apply_mask(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        let va = self.value(a);
        if mask.len() != va.len() {
            return Err(Error::shape("dropout", "mask length mismatch"));
        }
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::Dropout { a, mask }, &[a])
    }

    /// Multi-head scaled dot-product self-attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[rows x d]`; each segment attends only within its own
    /// rows. The attention probabilities go through dropout with rate
    /// `dropout` when `rng` is supplied.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
        dropout: Option<(f64, &mut Rng)>,
    ) -> Result<Var> {
        let (rows, d) = self.dims2(q, "attention")?;
        if self.dims2(k, "attention")? != (rows, d) || self.dims2(v, "attention")? != (rows, d) {
            return Err(Error::shape("attention", "q/k/v shapes differ"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("{d} not divisible by {heads} heads")));
        }
        if let Some(s) = segments.iter().find(|s| s.start + s.len > rows) {
            return Err(Error::shape("attention", format!("segment {s:?} exceeds {rows} rows")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let total: usize = segments.iter().map(|s| s.len * s.len * heads).sum();
        let mut probs = vec![T::zero(); total];
        let mut mask = match &dropout {
            Some((p, _)) if *p > 0.0 => {
                check_rate(*p)?;
                Some(Vec::with_capacity(total))
            }
            _ => None,
        };
        let mut out = vec![T::zero(); rows * d];
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut rng_p = dropout;
        let mut off = 0;
        let mut dropped = Vec::new();
        for seg in segments {
            let n = seg.len;
            for h in 0..heads {
                let base = seg.start * d + h * dh;
                let p = &mut probs[off..off + n * n];
                T::gemm(n, dh, n, &qd[base..], (d, 1), &kd[base..], (1, d), p, (n, 1), false);
                for row in p.chunks_mut(n) {
                    for x in row.iter_mut() {
                        *x = T::of(f(*x) * scale);
                    }
                    softmax_in_place(row);
                }
                let weights: &[T] = match (&mut mask, &mut rng_p) {
                    (Some(mask), Some((rate, rng))) => {
                        let m = dropout_mask::<T>(n * n, *rate, rng)?;
                        dropped.clear();
                        dropped.extend(p.iter().zip(&m).map(|(&a, &b)| a * b));
                        mask.extend(m);
                        &dropped
                    }
                    _ => p,
                };
                T::gemm(n, n, dh, weights, (n, 1), &vd[base..], (d, 1), &mut out[base..], (d, 1), false);
                off += n * n;
            }
        }
        let t = Tensor::new(vec![rows, d], out)?;
        self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
                mask,
            },
            &[q, k, v],
        )
    }

    /// Mean of each inclusive row range `(first, last)`; one output row per span.
    pub fn span_mean(&mut self, a: Var, spans: &[(usize, usize)]) -> Result<Var> {
        let va = self.value(a);
        let (n, cols) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(spans.len() * cols);
        for &(s, e) in spans {
            if s > e || e >= n {
                return Err(Error::shape("span_mean", format!("span ({s},{e}) of {n} rows")));
            }
            let inv = 1.0 / (e - s + 1) as f64;
            for c in 0..cols {
                let total: f64 = (s..=e).map(|r| f(va.data()[r * cols + c])).sum();
                data.push(T::of(total * inv));
            }
        }
        let t = Tensor::new(vec![spans.len(), cols], data)?;
        self.push(
            t,
            Op::SpanMean {
                a,
                spans: spans.to_vec(),
            },
            &[a],
        )
    }

    /// Scale each row to unit L2 norm. A zero row is a degenerate-vector error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let cols = va.cols();
        let mut norms = Vec::with_capacity(va.rows());
        let mut data = va.data().to_vec();
        for (i, row) in data.chunks_mut(cols.max(1)).enumerate() {
            let norm = row.iter().map(|&x| f(x) * f(x)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!("row {i} has zero norm")));
            }
            for x in row.iter_mut() {
                *x = T::of(f(*x) / norm);
            }
            norms.push(T::of(norm));
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::NormalizeRows { a, norms }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.value(a).data().iter().map(|&x| f(x)).sum();
        self.push(Tensor::scalar(T::of(total)), Op::Sum { a }, &[a])
    }

    /// Mean softmax cross-entropy of `logits` rows against class `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (m, classes) = (vl.rows(), vl.cols());
        if targets.len() != m || m == 0 {
            return Err(Error::shape("cross_entropy", format!("{m} rows, {} targets", targets.len())));
        }
        let probs = softmax(vl)?.into_data();
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::shape("cross_entropy", format!("target {t} of {classes}")));
            }
            loss -= f(probs[i * classes + t]).max(f64::MIN_POSITIVE).ln();
        }
        let t = Tensor::scalar(T::of(loss / m as f64));
        self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Summed contrastive negative log-likelihood over a square similarity matrix.
    ///
    /// For anchor `i` with positive `p = positives[i]`:
    /// `-s[i][p] / tau + log sum_{j in D_i} exp(s[i][j] / tau)` where `D_i` is every
    /// column except `i` and `p`, plus `p` itself when `include_positive` is set.
    pub fn contrastive(
        &mut self,
        sims: Var,
        positives: &[usize],
        tau: f64,
        include_positive: bool,
    ) -> Result<Var> {
        let vs = self.value(sims);
        let (n, c) = (vs.rows(), vs.cols());
        if n != c || positives.len() != n {
            return Err(Error::shape("contrastive", format!("{n}x{c} sims, {} positives", positives.len())));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
        }
        let inv_tau = 1.0 / tau;
        let mut weights = vec![T::zero(); n * n];
        let mut loss = 0.0f64;
        for i in 0..n {
            let p = positives[i];
            if p >= n || p == i {
                return Err(Error::shape("contrastive", format!("anchor {i} has positive {p}")));
            }
            let row = vs.row(i);
            let in_denominator = |j: usize| j != i && (j != p || include_positive);
            let max = (0..n)
                .filter(|&j| in_denominator(j))
                .map(|j| f(row[j]) * inv_tau)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Degenerate(format!("anchor {i} has no negatives")));
            }
            let mut z = 0.0;
            for j in (0..n).filter(|&j| in_denominator(j)) {
                let e = (f(row[j]) * inv_tau - max).exp();
                weights[i * n + j] = T::of(e);
                z += e;
            }
            for j in (0..n).filter(|&j| in_denominator(j)) {
                weights[i * n + j] = T::of(f(weights[i * n + j]) / z);
            }
            loss += -f(row[p]) * inv_tau + max + z.ln();
        }
        self.push(
            Tensor::scalar(T::of(loss)),
            Op::Contrastive {
                sims,
                positives: positives.to_vec(),
                inv_tau: T::of(inv_tau),
                weights,
            },
            &[sims],
        )
    }

    /// Reverse pass from a scalar root. Gradients accumulate on every node that
    /// requires one; read them back with [`Graph::grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let shape = self.value(root).shape().to_vec();
        self.nodes[root.0].grad = Some(Tensor::filled(&shape, T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (parent, delta) in contributions {
                if !delta.is_finite() {
                    return Err(Error::NonFinite {
                        op: self.nodes[i].op.name(),
                    });
                }
                let node = &mut self.nodes[parent.0];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                            *a = *a + *d;
                        }
                    }
                    None => node.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims2(*a, "matmul")?;
                let n = node.value.cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    // dA = dC @ B^T  (or dC @ B when B was used transposed)
                    let mut da = vec![T::zero(); m * k];
                    let bs = if *trans_b { (k, 1) } else { (1, n) };
                    T::gemm(m, n, k, gd, (n, 1), bd, bs, &mut da, (k, 1), false);
                    out.push((*a, Tensor::new(self.value(*a).shape().to_vec(), da)?));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    if *trans_b {
                        // B is [n x k]: dB = dC^T @ A
                        T::gemm(n, m, k, gd, (1, n), ad, (k, 1), &mut db, (k, 1), false);
                    } else {
                        // dB = A^T @ dC
                        T::gemm(k, m, n, ad, (1, k), gd, (n, 1), &mut db, (n, 1), false);
                    }
                    out.push((*b, Tensor::new(self.value(*b).shape().to_vec(), db)?));
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    out.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::AddRow { a, bias } => {
                if self.wants(*a) {
                    out.push((*a, g.clone()));
                }
                if self.wants(*bias) {
                    let cols = g.cols();
                    let mut db = vec![0.0f64; cols];
                    for row in gd.chunks(cols.max(1)) {
                        for (acc, &x) in db.iter_mut().zip(row) {
                            *acc += f(x);
                        }
                    }
                    let db = db.into_iter().map(T::of).collect();
                    out.push((*bias, Tensor::new(self.value(*bias).shape().to_vec(), db)?));
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    out.push((*a, Tensor::new(va.shape().to_vec(), d)?));
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    out.push((*b, Tensor::new(vb.shape().to_vec(), d)?));
                }
            }
            Op::Scale { a, c } => {
                out.push((*a, g.map(|x| x * *c)));
            }
            Op::Gelu { a } => {
                let va = self.value(*a);
                let d = va
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, &gy)| {
                        let x = f(x);
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        T::of(f(gy) * (0.5 * (1.0 + t) + 0.5 * x * dt))
                    })
                    .collect();
                out.push((*a, Tensor::new(va.shape().to_vec(), d)?));
            }
            Op::Tanh { a } => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&y, &gy)| gy * (T::one() - y * y))
                    .collect();
                out.push((*a, Tensor::new(node.value.shape().to_vec(), d)?));
            }
            Op::SoftmaxRows { a } => {
                let cols = node.value.cols().max(1);
                let mut d = Vec::with_capacity(gd.len());
                for (y, gy) in node.value.data().chunks(cols).zip(gd.chunks(cols)) {
                    let dot: f64 = y.iter().zip(gy).map(|(&a, &b)| f(a) * f(b)).sum();
                    d.extend(y.iter().zip(gy).map(|(&a, &b)| T::of(f(a) * (f(b) - dot))));
                }
                out.push((*a, Tensor::new(node.value.shape().to_vec(), d)?));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = node.value.cols();
                let gam = self.value(*gamma).data();
                let mut dx = vec![T::zero(); gd.len()];
                let mut dg = vec![0.0f64; cols];
                let mut dbeta = vec![0.0f64; cols];
                for (r, is) in inv_std.iter().enumerate() {
                    let gy = &gd[r * cols..(r + 1) * cols];
                    let xh = &xhat[r * cols..(r + 1) * cols];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for c in 0..cols {
                        let dxh = f(gy[c]) * f(gam[c]);
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * f(xh[c]);
                        dg[c] += f(gy[c]) * f(xh[c]);
                        dbeta[c] += f(gy[c]);
                    }
                    mean_dxh /= cols as f64;
                    mean_dxh_xh /= cols as f64;
                    for c in 0..cols {
                        let dxh = f(gy[c]) * f(gam[c]);
                        dx[r * cols + c] =
                            T::of(f(*is) * (dxh - mean_dxh - f(xh[c]) * mean_dxh_xh));
                    }
                }
                if self.wants(*x) {
                    out.push((*x, Tensor::new(node.value.shape().to_vec(), dx)?));
                }
                if self.wants(*gamma) {
                    let d = dg.into_iter().map(T::of).collect();
                    out.push((*gamma, Tensor::new(self.value(*gamma).shape().to_vec(), d)?));
                }
                if self.wants(*beta) {
                    let d = dbeta.into_iter().map(T::of).collect();
                    out.push((*beta, Tensor::new(self.value(*beta).shape().to_vec(), d)?));
                }
            }
            Op::GatherRows { a, rows } => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut d = vec![T::zero(); va.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..cols {
                        d[r * cols + c] = d[r * cols + c] + gd[i * cols + c];
                    }
                }
                out.push((*a, Tensor::new(va.shape().to_vec(), d)?));
            }
            Op::Dropout { a, mask } => {
                let d = gd.iter().zip(mask).map(|(&x, &m)| x * m).collect();
                out.push((*a, Tensor::new(node.value.shape().to_vec(), d)?));
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
                mask,
            } => {
                let (rows, d) = (node.value.rows(), node.value.cols());
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![T::zero(); rows * d];
                let mut dk = vec![T::zero(); rows * d];
                let mut dv = vec![T::zero(); rows * d];
                let mut off = 0;
                let mut dp = Vec::new();
                let mut dropped = Vec::new();
                for seg in segments {
                    let n = seg.len;
                    for h in 0..*heads {
                        let base = seg.start * d + h * dh;
                        let p = &probs[off..off + n * n];
                        let m = mask.as_ref().map(|m| &m[off..off + n * n]);
                        let weights: &[T] = match m {
                            Some(m) => {
                                dropped.clear();
                                dropped.extend(p.iter().zip(m).map(|(&a, &b)| a * b));
                                &dropped
                            }
                            None => p,
                        };
                        // dV += W^T dO
                        T::gemm(n, n, dh, weights, (1, n), &gd[base..], (d, 1), &mut dv[base..], (d, 1), true);
                        // dW = dO V^T
                        dp.clear();
                        dp.resize(n * n, T::zero());
                        T::gemm(n, dh, n, &gd[base..], (d, 1), &vd[base..], (1, d), &mut dp, (n, 1), false);
                        if let Some(m) = m {
                            for (x, &mm) in dp.iter_mut().zip(m) {
                                *x = *x * mm;
                            }
                        }
                        // softmax backward, then the 1/sqrt(dh) scale
                        for r in 0..n {
                            let pr = &p[r * n..(r + 1) * n];
                            let dr = &mut dp[r * n..(r + 1) * n];
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(&a, &b)| f(a) * f(b)).sum();
                            for (x, &pp) in dr.iter_mut().zip(pr) {
                                *x = T::of(f(pp) * (f(*x) - dot) * scale);
                            }
                        }
                        // dQ += dS K ; dK += dS^T Q
                        T::gemm(n, n, dh, &dp, (n, 1), &kd[base..], (d, 1), &mut dq[base..], (d, 1), true);
                        T::gemm(n, n, dh, &dp, (1, n), &qd[base..], (d, 1), &mut dk[base..], (d, 1), true);
                        off += n * n;
                    }
                }
                for (var, data) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        out.push((var, Tensor::new(vec![rows, d], data)?));
                    }
                }
            }
            Op::SpanMean { a, spans } => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut d = vec![T::zero(); va.len()];
                for (i, &(s, e)) in spans.iter().enumerate() {
                    let inv = T::of(1.0 / (e - s + 1) as f64);
                    for r in s..=e {
                        for c in 0..cols {
                            d[r * cols + c] = d[r * cols + c] + gd[i * cols + c] * inv;
                        }
                    }
                }
                out.push((*a, Tensor::new(va.shape().to_vec(), d)?));
            }
            Op::NormalizeRows { a, norms } => {
                let cols = node.value.cols().max(1);
                let mut d = Vec::with_capacity(gd.len());
                for ((y, gy), &norm) in node.value.data().chunks(cols).zip(gd.chunks(cols)).zip(norms) {
                    let dot: f64 = y.iter().zip(gy).map(|(&a, &b)| f(a) * f(b)).sum();
                    d.extend(
                        y.iter()
                            .zip(gy)
                            .map(|(&yy, &gg)| T::of((f(gg) - f(yy) * dot) / f(norm))),
                    );
                }
                out.push((*a, Tensor::new(node.value.shape().to_vec(), d)?));
            }
            Op::Sum { a } => {
                let va = self.value(*a);
                out.push((*a, Tensor::filled(va.shape(), gd[0])));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let vl = self.value(*logits);
                let classes = vl.cols();
                let scale = f(gd[0]) / targets.len() as f64;
                let mut d: Vec<T> = probs.iter().map(|&p| T::of(f(p) * scale)).collect();
                for (i, &t) in targets.iter().enumerate() {
                    let idx = i * classes + t;
                    d[idx] = T::of(f(d[idx]) - scale);
                }
                out.push((*logits, Tensor::new(vl.shape().to_vec(), d)?));
            }
            Op::Contrastive {
                sims,
                positives,
                inv_tau,
                weights,
            } => {
                let n = positives.len();
                let scale = f(gd[0]) * f(*inv_tau);
                let mut d: Vec<T> = weights.iter().map(|&w| T::of(f(w) * scale)).collect();
                for (i, &p) in positives.iter().enumerate() {
                    d[i * n + p] = T::of(f(d[i * n + p]) - scale);
                }
                out.push((*sims, Tensor::new(vec![n, n], d)?));
            }
        }
        Ok(out)
    }
}

/// Value and gradient of a scalar objective with respect to `params`.
///
/// `objective` receives a fresh graph and one [`Var`] per parameter, in order.
/// Parameters the objective never touches get a zero gradient.
pub fn gradient<T, F>(params: &[Tensor<T>], objective: F) -> Result<(T, Vec<Tensor<T>>)>
where
    T: Scalar,
    F: FnOnce(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = objective(&mut g, &vars)?;
    let value = g.scalar(root);
    g.backward(root)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, grads))
}
