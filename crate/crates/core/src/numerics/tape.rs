use super::param::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::{ShapeError, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Softmax { a: Var, axis: usize },
    CausalSoftmax(Var),
    Sigmoid(Var),
    Silu(Var),
    Log(Var),
    RmsNorm { x: Var, w: Var, inv: Vec<T> },
    Transpose { a: Var, ax0: usize, ax1: usize },
    Reshape(Var),
    Slice { a: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    Map { a: Var, deriv: fn(T, T) -> T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    param: Option<ParamId>,
}

/// Inputs to `log` are clamped from below at this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// Records tensor operations for reverse-mode differentiation.
///
/// A tape is single-threaded and append-only. Leaves that require gradients
/// accumulate `dLoss/dLeaf` across [`Tape::backward`] calls until
/// [`Tape::zero_grad`].
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if it requires one and backward has run.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a parameter as a leaf. Frozen parameters are recorded without a
    /// gradient requirement; gradients still propagate through them to any
    /// upstream value that requires one.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, !p.frozen);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Adds every parameter leaf's gradient into the store's grad buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                let buf = store.grad_mut(id);
                for (dst, &src) in buf.iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn broadcast_shape(&self, op: &str, a: Var, b: Var) -> Result<Vec<usize>, ShapeError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb || sa.ends_with(sb) {
            Ok(sa.to_vec())
        } else if sb.ends_with(sa) {
            Ok(sb.to_vec())
        } else {
            Err(ShapeError::new(op, format!("cannot broadcast {sa:?} with {sb:?}")))
        }
    }

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, ShapeError> {
        let shape = self.broadcast_shape(name, a, b)?;
        let da = self.value(a).data();
        let db = self.value(b).data();
        let (la, lb) = (da.len(), db.len());
        let numel: usize = shape.iter().product();
        let data = if la == lb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..numel).map(|i| f(da[i % la], db[i % lb])).collect()
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    /// Elementwise sum; the shorter operand's shape must be a suffix of the other.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x * s).collect())
            .expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x + s).collect())
            .expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// Matrix product over the last two axes.
    ///
    /// `b` is either a rank-2 matrix shared across all leading axes of `a`, or
    /// has the same rank and leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || ShapeError::new("matmul", format!("{sa:?} x {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(err());
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![T::zero(); shape.iter().product()];
        let da = self.value(a).data();
        let db = self.value(b).data();
        if sb.len() == 2 {
            let rows: usize = shape[..shape.len() - 1].iter().product();
            T::gemm(rows, k, n, da, k as isize, 1, db, n as isize, 1, T::zero(), &mut out, n as isize, 1);
        } else {
            if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(err());
            }
            let batches: usize = sa[..sa.len() - 2].iter().product();
            for bi in 0..batches {
                T::gemm(
                    m,
                    k,
                    n,
                    &da[bi * m * k..],
                    k as isize,
                    1,
                    &db[bi * k * n..],
                    n as isize,
                    1,
                    T::zero(),
                    &mut out[bi * m * n..],
                    n as isize,
                    1,
                );
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Numerically stable softmax along `axis` (row max subtracted first).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, ShapeError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(ShapeError::new("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for k in 0..inner {
                let at = |j: usize| (o * n + j) * inner + k;
                let mut mx = T::neg_infinity();
                for j in 0..n {
                    mx = mx.max(src[at(j)]);
                }
                let mut total = T::zero();
                for j in 0..n {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, axis }, rg))
    }

    /// Softmax over the last axis where row `i` (second-to-last axis) may only
    /// weight columns `j <= i`. Masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, ShapeError> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 || shape[shape.len() - 1] != shape[shape.len() - 2] {
            return Err(ShapeError::new("causal_softmax", format!("needs square trailing axes, got {shape:?}")));
        }
        let n = shape[shape.len() - 1];
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for (r, (row_in, row_out)) in src.chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let allowed = r % n + 1;
            let mx = row_in[..allowed].iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut total = T::zero();
            for j in 0..allowed {
                let e = (row_in[j] - mx).exp();
                row_out[j] = e;
                total += e;
            }
            for v in &mut row_out[..allowed] {
                *v = *v / total;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::CausalSoftmax(a), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    /// Natural log with the input clamped at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let floor = T::lit(LOG_FLOOR);
        self.unary(a, move |x| x.max(floor).ln(), Op::Log(a))
    }

    /// Elementwise map with a caller-supplied derivative `deriv(x, f(x))`.
    pub fn map(&mut self, a: Var, f: fn(T) -> T, deriv: fn(T, T) -> T) -> Var {
        self.unary(a, f, Op::Map { a, deriv })
    }

    /// Root-mean-square normalization over the last axis with a learned gain.
    pub fn rmsnorm(&mut self, x: Var, w: Var, eps: T) -> Result<Var, ShapeError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| ShapeError::new("rmsnorm", "rank-0 input"))?;
        if self.shape(w) != [d] {
            return Err(ShapeError::new(
                "rmsnorm",
                format!("gain {:?} does not match last axis of {shape:?}", self.shape(w)),
            ));
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = vec![T::zero(); xs.len()];
        let mut inv = Vec::with_capacity(xs.len() / d.max(1));
        let dn = T::lit(d as f64);
        for (row, dst) in xs.chunks(d).zip(out.chunks_mut(d)) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let r = (ms + eps).sqrt().recip();
            inv.push(r);
            for j in 0..d {
                dst[j] = row[j] * r * ws[j];
            }
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(Tensor::new(shape, out)?, Op::RmsNorm { x, w, inv }, rg))
    }

    /// Swaps two axes, materializing the result.
    pub fn transpose(&mut self, a: Var, ax0: usize, ax1: usize) -> Result<Var, ShapeError> {
        let shape = self.shape(a).to_vec();
        if ax0 >= shape.len() || ax1 >= shape.len() {
            return Err(ShapeError::new("transpose", format!("axes ({ax0},{ax1}) for {shape:?}")));
        }
        let (data, out_shape) = swap_axes(self.value(a).data(), &shape, ax0, ax1);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Transpose { a, ax0, ax1 }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, ShapeError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(ShapeError::new("slice", format!("[{start}..{}] on axis {axis} of {shape:?}", start + len)));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Slice { a, axis, start }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, ShapeError> {
        let first = parts
            .first()
            .ok_or_else(|| ShapeError::new("concat", "no operands"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(ShapeError::new("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(ShapeError::new("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let inner: usize = base[axis + 1..].iter().product();
        let outer: usize = base[..axis].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = self.shape(*p)[axis];
                let src = self.value(*p).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<T>() / T::lit(t.numel().max(1) as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Propagates `dLoss/d·` from a one-element `loss` to every leaf that
    /// requires a gradient. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let loss_shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let val = node.value.data();
            match &node.op {
                Op::Leaf => leaf_grads.push((idx, g)),
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(buf) = slot(&mut grads, nodes, v) {
                            reduce_into(buf, &g, |_, gi| gi);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        reduce_into(buf, &g, |_, gi| gi);
                    }
                    if let Some(buf) = slot(&mut grads, nodes, *b) {
                        reduce_into(buf, &g, |_, gi| -gi);
                    }
                }
                Op::Mul(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        reduce_into(buf, &g, |i, gi| gi * bv[i % bv.len()]);
                    }
                    if let Some(buf) = slot(&mut grads, nodes, *b) {
                        reduce_into(buf, &g, |i, gi| gi * av[i % av.len()]);
                    }
                }
                Op::Scale(a, s) => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        reduce_into(buf, &g, |_, gi| gi * *s);
                    }
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        reduce_into(buf, &g, |_, gi| gi);
                    }
                }
                Op::MatMul(a, b) => matmul_backward(&mut grads, nodes, *a, *b, &g),
                Op::Softmax { a, axis } => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        let shape = node.value.shape();
                        let n = shape[*axis];
                        let inner: usize = shape[axis + 1..].iter().product();
                        let outer: usize = shape[..*axis].iter().product();
                        for o in 0..outer {
                            for k in 0..inner {
                                let at = |j: usize| (o * n + j) * inner + k;
                                let dot = (0..n).map(|j| g[at(j)] * val[at(j)]).sum::<T>();
                                for j in 0..n {
                                    buf[at(j)] += val[at(j)] * (g[at(j)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::CausalSoftmax(a) => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        let n = *node.value.shape().last().expect("rank >= 2");
                        for ((y, gy), dst) in val.chunks(n).zip(g.chunks(n)).zip(buf.chunks_mut(n)) {
                            let dot = y.iter().zip(gy).map(|(&p, &q)| p * q).sum::<T>();
                            for j in 0..n {
                                dst[j] += y[j] * (gy[j] - dot);
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        for i in 0..g.len() {
                            buf[i] += g[i] * val[i] * (T::one() - val[i]);
                        }
                    }
                }
                Op::Silu(a) => {
                    let xs = nodes[a.0].value.data();
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        for i in 0..g.len() {
                            let s = sigmoid(xs[i]);
                            buf[i] += g[i] * s * (T::one() + xs[i] * (T::one() - s));
                        }
                    }
                }
                Op::Log(a) => {
                    let xs = nodes[a.0].value.data();
                    let floor = T::lit(LOG_FLOOR);
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        for i in 0..g.len() {
                            if xs[i] > floor {
                                buf[i] += g[i] / xs[i];
                            }
                        }
                    }
                }
                Op::Map { a, deriv } => {
                    let xs = nodes[a.0].value.data();
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        for i in 0..g.len() {
                            buf[i] += g[i] * deriv(xs[i], val[i]);
                        }
                    }
                }
                Op::RmsNorm { x, w, inv } => {
                    let xs = nodes[x.0].value.data();
                    let ws = nodes[w.0].value.data();
                    let d = ws.len();
                    let dn = T::lit(d as f64);
                    if let Some(buf) = slot(&mut grads, nodes, *x) {
                        for (r, &ir) in inv.iter().enumerate() {
                            let row = &xs[r * d..(r + 1) * d];
                            let gr = &g[r * d..(r + 1) * d];
                            let dot = (0..d).map(|j| gr[j] * ws[j] * row[j] * ir).sum::<T>() / dn;
                            for j in 0..d {
                                buf[r * d + j] += ir * (gr[j] * ws[j] - row[j] * ir * dot);
                            }
                        }
                    }
                    if let Some(buf) = slot(&mut grads, nodes, *w) {
                        for (r, &ir) in inv.iter().enumerate() {
                            for j in 0..d {
                                buf[j] += g[r * d + j] * xs[r * d + j] * ir;
                            }
                        }
                    }
                }
                Op::Transpose { a, ax0, ax1 } => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        let (back, _) = swap_axes(&g, node.value.shape(), *ax0, *ax1);
                        reduce_into(buf, &back, |_, gi| gi);
                    }
                }
                Op::Slice { a, axis, start } => {
                    let src_shape = nodes[a.0].value.shape();
                    let len = node.value.shape()[*axis];
                    if len == 0 {
                        continue;
                    }
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        let n = src_shape[*axis];
                        let inner: usize = src_shape[axis + 1..].iter().product();
                        for (o, chunk) in g.chunks(len * inner).enumerate() {
                            let base = (o * n + start) * inner;
                            for (dst, &gi) in buf[base..base + chunk.len()].iter_mut().zip(chunk) {
                                *dst += gi;
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let shape = node.value.shape();
                    let total = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let outer: usize = shape[..*axis].iter().product();
                    let mut offset = 0;
                    for p in parts {
                        let n = nodes[p.0].value.shape()[*axis];
                        if let Some(buf) = slot(&mut grads, nodes, *p) {
                            for o in 0..outer {
                                let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                                for (dst, &gi) in buf[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                                    *dst += gi;
                                }
                            }
                        }
                        offset += n;
                    }
                }
                Op::Sum(a) => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        for v in buf.iter_mut() {
                            *v += g[0];
                        }
                    }
                }
                Op::Mean(a) => {
                    if let Some(buf) = slot(&mut grads, nodes, *a) {
                        let share = g[0] / T::lit(buf.len().max(1) as f64);
                        for v in buf.iter_mut() {
                            *v += share;
                        }
                    }
                }
            }
        }

        for (idx, g) in leaf_grads {
            let node = &mut self.nodes[idx];
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(d, &s)| *d += s),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Lazily allocated gradient buffer for `v`, or `None` when `v` needs no gradient.
fn slot<'g, T: Scalar>(
    grads: &'g mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let numel = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); numel]))
}

/// `buf[i % len] += f(i, g[i])`; sums broadcast repeats back onto the operand.
fn reduce_into<T: Scalar>(buf: &mut [T], g: &[T], f: impl Fn(usize, T) -> T) {
    let n = buf.len();
    if n == g.len() {
        for (i, (dst, &gi)) in buf.iter_mut().zip(g).enumerate() {
            *dst += f(i, gi);
        }
    } else {
        for (i, &gi) in g.iter().enumerate() {
            buf[i % n] += f(i, gi);
        }
    }
}

fn matmul_backward<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
) {
    let sa = nodes[a.0].value.shape();
    let sb = nodes[b.0].value.shape();
    let da = nodes[a.0].value.data();
    let db = nodes[b.0].value.data();
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let n = sb[sb.len() - 1];
    let (ki, ni) = (k as isize, n as isize);
    if sb.len() == 2 {
        let rows: usize = sa[..sa.len() - 1].iter().product();
        if let Some(buf) = slot(grads, nodes, a) {
            // dA = dC · Bᵀ
            T::gemm(rows, n, k, g, ni, 1, db, 1, ni, T::one(), buf, ki, 1);
        }
        if let Some(buf) = slot(grads, nodes, b) {
            // dB = Aᵀ · dC
            T::gemm(k, rows, n, da, 1, ki, g, ni, 1, T::one(), buf, ni, 1);
        }
    } else {
        let batches: usize = sa[..sa.len() - 2].iter().product();
        if let Some(buf) = slot(grads, nodes, a) {
            for bi in 0..batches {
                T::gemm(
                    m,
                    n,
                    k,
                    &g[bi * m * n..],
                    ni,
                    1,
                    &db[bi * k * n..],
                    1,
                    ni,
                    T::one(),
                    &mut buf[bi * m * k..],
                    ki,
                    1,
                );
            }
        }
        if let Some(buf) = slot(grads, nodes, b) {
            for bi in 0..batches {
                T::gemm(
                    k,
                    m,
                    n,
                    &da[bi * m * k..],
                    1,
                    ki,
                    &g[bi * m * n..],
                    ni,
                    1,
                    T::one(),
                    &mut buf[bi * k * n..],
                    ni,
                    1,
                );
            }
        }
    }
}

/// Copies `src` (row-major `shape`) with axes `ax0` and `ax1` exchanged.
fn swap_axes<T: Scalar>(src: &[T], shape: &[usize], ax0: usize, ax1: usize) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let mut out_shape = shape.to_vec();
    out_shape.swap(ax0, ax1);
    if ax0 == ax1 || rank == 0 {
        return (src.to_vec(), out_shape);
    }
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    // stride in the source for each axis of the output
    let mut strides = in_strides.clone();
    strides.swap(ax0, ax1);

    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return (out, out_shape);
    }
    let last = rank - 1;
    let inner_len = out_shape[last];
    let inner_stride = strides[last];
    let mut idx = vec![0usize; rank];
    loop {
        let base: usize = (0..last).map(|d| idx[d] * strides[d]).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|j| src[base + j * inner_stride]));
        }
        // advance the odometer over all but the last axis
        let mut d = last;
        loop {
            if d == 0 {
                return (out, out_shape);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}
