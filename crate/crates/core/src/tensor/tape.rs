use super::params::{ParamId, Parameters};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    WeightedGather { x: Var, rows: Vec<usize>, weights: Vec<T>, k: usize },
    Relu(Var),
    LeakyRelu(Var, T),
    Softmax { x: Var, axis: usize },
    SumAxis { x: Var, axis: usize },
    SumAll(Var),
    Reshape(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, weights: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A dynamic computation graph, rebuilt for every forward pass.
///
/// Nodes are appended in evaluation order, so the tape itself is a
/// topological order and [`Tape::backward`] is a single reverse sweep.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, len, inner)` strides for iterating one axis of a row-major shape.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `out[n x m] = a[n x k] * b[k x m]`
fn matmul_nn<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; n * m];
    T::gemm(n, k, m, a, [k, 1], b, [m, 1], &mut out);
    out
}

/// `out[n x k] = g[n x m] * b[k x m]^T`
fn matmul_nt<T: Scalar>(g: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; n * k];
    T::gemm(n, m, k, g, [m, 1], b, [1, m], &mut out);
    out
}

/// `out[k x m] = a[n x k]^T * g[n x m]`
fn matmul_tn<T: Scalar>(a: &[T], g: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; k * m];
    T::gemm(k, n, m, a, [1, k], g, [m, 1], &mut out);
    out
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is kept after [`Tape::backward`].
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, params: &Parameters<T>, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (n, k, m) = match (sa, sb) {
            ([n, k], [k2, m]) if k == k2 => (*n, *k, *m),
            _ => return Err(mismatch("matmul", sa, sb)),
        };
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: ta.shape().to_vec(),
            data,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a `[m]` bias to every row of a `[.., m]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let m = *tx.shape().last().unwrap_or(&0);
        if tb.len() != m || tx.rank() == 0 {
            return Err(mismatch("add_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(m.max(1)) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|&v| v * c).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(Error::Empty("concat inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(mismatch("narrow", &s, &[axis, start, len]));
        }
        let (outer, alen, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Narrow { x, axis, start }, rg))
    }

    /// Rows of `x` (axis 0) in the given order; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.first().ok_or_else(|| mismatch("gather_rows", &s, &[]))?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(mismatch("gather_rows", &s, &[bad]));
        }
        let width: usize = s[1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let mut shape = s;
        shape[0] = rows.len();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor { shape, data },
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// `out[q] = sum_j weights[q*k + j] * x[rows[q*k + j]]` for a `[M, D]` input.
    ///
    /// Zero-weight terms are skipped entirely, so a single unit weight
    /// reproduces the selected row bit-for-bit.
    pub fn weighted_gather(&mut self, x: Var, rows: &[usize], weights: &[T], k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (m, d) = match s[..] {
            [m, d] => (m, d),
            _ => return Err(mismatch("weighted_gather", &s, &[k])),
        };
        if k == 0 || rows.len() != weights.len() || rows.len() % k != 0 {
            return Err(mismatch("weighted_gather", &[rows.len(), weights.len()], &[k]));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(mismatch("weighted_gather", &s, &[bad]));
        }
        let q = rows.len() / k;
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; q * d];
        for (qi, out) in data.chunks_exact_mut(d.max(1)).enumerate().take(q) {
            let mut first = true;
            for j in qi * k..(qi + 1) * k {
                let w = weights[j];
                if w == T::ZERO {
                    continue;
                }
                let row = &src[rows[j] * d..(rows[j] + 1) * d];
                if first {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o = w * v;
                    }
                    first = false;
                } else {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += w * v;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: vec![q, d],
                data,
            },
            Op::WeightedGather {
                x,
                rows: rows.to_vec(),
                weights: weights.to_vec(),
                k,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: T) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|&v| if v > T::ZERO { v } else { alpha * v }).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::LeakyRelu(x, alpha), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(mismatch("softmax", &s, &[axis]));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = data[at(0)];
                for j in 1..len {
                    mx = mx.max(data[at(j)]);
                }
                let mut sum = T::ZERO;
                for j in 0..len {
                    let e = (data[at(j)] - mx).exp();
                    data[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    data[at(j)] = data[at(j)] / sum;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: s, data }, Op::Softmax { x, axis }, rg))
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(mismatch("sum_axis", &s, &[axis]));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = o * len * inner + j * inner;
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(&src[base..base + inner]) {
                    *d += v;
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| mismatch("mean_axis", self.shape(x), &[axis]))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, T::ONE / T::from_f64(len.max(1) as f64)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, T::ONE / T::from_f64(n as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        if shape.iter().product::<usize>() != tx.len() {
            return Err(mismatch("reshape", tx.shape(), &shape));
        }
        let t = Tensor {
            shape,
            data: tx.data().to_vec(),
        };
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `(1/Q) * sum_q weights[q] * -log softmax(logits[q])[labels[q]]`
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[T]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let (q, c) = match s[..] {
            [q, c] => (q, c),
            _ => return Err(mismatch("cross_entropy", &s, &[labels.len()])),
        };
        if q == 0 {
            return Err(Error::Empty("cross_entropy batch"));
        }
        if labels.len() != q || weights.len() != q {
            return Err(mismatch("cross_entropy", &s, &[labels.len(), weights.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(mismatch("cross_entropy", &s, &[bad]));
        }
        let data = self.value(logits).data();
        let mut total = T::ZERO;
        for (qi, (&y, &w)) in labels.iter().zip(weights).enumerate() {
            let row = &data[qi * c..(qi + 1) * c];
            let mx = row.iter().copied().fold(row[0], T::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
            total += w * (lse - row[y]);
        }
        let loss = total / T::from_f64(q as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of leaves and parameters
    /// remain available through [`Tape::grad`] and [`Tape::param_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::ONE]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (n, k) = ta.dims2().expect("matmul lhs is rank 2");
                    let m = tb.shape()[1];
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, matmul_nt(&g, tb.data(), n, k, m));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, matmul_tn(ta.data(), &g, n, k, m));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.iter().map(|&v| -v).collect());
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.iter().zip(tb.data()).map(|(&x, &y)| x * y).collect());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.iter().zip(ta.data()).map(|(&x, &y)| x * y).collect());
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.rg(*bias) {
                        let m = self.value(*bias).len();
                        let mut gb = vec![T::ZERO; m];
                        for row in g.chunks_exact(m.max(1)) {
                            for (o, &v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Scale(x, c) => {
                    if self.rg(*x) {
                        let c = *c;
                        accumulate(&mut grads, *x, g.iter().map(|&v| v * c).collect());
                    }
                }
                Op::Concat { inputs, axis } => {
                    let shape = node.value.shape();
                    let (outer, total, inner) = axis_split(shape, *axis);
                    let mut offset = 0;
                    for &v in inputs {
                        let len = self.shape(v)[*axis];
                        if self.rg(v) {
                            let mut part = Vec::with_capacity(outer * len * inner);
                            for o in 0..outer {
                                let base = o * total * inner + offset * inner;
                                part.extend_from_slice(&g[base..base + len * inner]);
                            }
                            accumulate(&mut grads, v, part);
                        }
                        offset += len;
                    }
                }
                Op::Narrow { x, axis, start } => {
                    if self.rg(*x) {
                        let src_shape = self.shape(*x);
                        let (outer, alen, inner) = axis_split(src_shape, *axis);
                        let len = node.value.shape()[*axis];
                        let mut gx = vec![T::ZERO; outer * alen * inner];
                        for o in 0..outer {
                            let dst = o * alen * inner + start * inner;
                            gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::GatherRows { x, rows } => {
                    if self.rg(*x) {
                        let tx = self.value(*x);
                        let width: usize = tx.shape()[1..].iter().product();
                        let mut gx = vec![T::ZERO; tx.len()];
                        for (j, &r) in rows.iter().enumerate() {
                            for (o, &v) in gx[r * width..(r + 1) * width].iter_mut().zip(&g[j * width..(j + 1) * width]) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::WeightedGather { x, rows, weights, k } => {
                    if self.rg(*x) {
                        let tx = self.value(*x);
                        let d = tx.shape()[1];
                        let mut gx = vec![T::ZERO; tx.len()];
                        for (j, (&r, &w)) in rows.iter().zip(weights).enumerate() {
                            if w == T::ZERO {
                                continue;
                            }
                            let q = j / k;
                            for (o, &v) in gx[r * d..(r + 1) * d].iter_mut().zip(&g[q * d..(q + 1) * d]) {
                                *o += w * v;
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Relu(x) => {
                    if self.rg(*x) {
                        let tx = self.value(*x);
                        let gx = g
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| if xv > T::ZERO { gv } else { T::ZERO })
                            .collect();
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::LeakyRelu(x, alpha) => {
                    if self.rg(*x) {
                        let tx = self.value(*x);
                        let a = *alpha;
                        let gx = g
                            .iter()
                            .zip(tx.data())
                            .map(|(&gv, &xv)| if xv > T::ZERO { gv } else { a * gv })
                            .collect();
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Softmax { x, axis } => {
                    if self.rg(*x) {
                        let y = node.value.data();
                        let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                        let mut gx = vec![T::ZERO; y.len()];
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| o * len * inner + j * inner + i;
                                let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                                for j in 0..len {
                                    gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                                }
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::SumAxis { x, axis } => {
                    if self.rg(*x) {
                        let (outer, len, inner) = axis_split(self.shape(*x), *axis);
                        let mut gx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            for _ in 0..len {
                                gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::SumAll(x) => {
                    if self.rg(*x) {
                        let n = self.value(*x).len();
                        accumulate(&mut grads, *x, vec![g[0]; n]);
                    }
                }
                Op::Reshape(x) => {
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::CrossEntropy { logits, labels, weights } => {
                    if self.rg(*logits) {
                        let tl = self.value(*logits);
                        let c = tl.shape()[1];
                        let q = labels.len();
                        let scale = g[0] / T::from_f64(q as f64);
                        let mut gl = vec![T::ZERO; tl.len()];
                        for (qi, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                            let row = &tl.data()[qi * c..(qi + 1) * c];
                            let mx = row.iter().copied().fold(row[0], T::max);
                            let sum: T = row.iter().map(|&v| (v - mx).exp()).sum();
                            for (j, (&v, o)) in row.iter().zip(&mut gl[qi * c..(qi + 1) * c]).enumerate() {
                                let p = (v - mx).exp() / sum;
                                let target = if j == y { T::ONE } else { T::ZERO };
                                *o = scale * w * (p - target);
                            }
                        }
                        accumulate(&mut grads, *logits, gl);
                    }
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of a leaf (variable or parameter node) after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(parameter, gradient)` for every parameter node reached by `backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param(id) => self.grads.get(i).and_then(|g| g.as_deref()).map(|g| (id, g)),
            _ => None,
        })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
