//! Gradient tape: records every executed op with its output value and
//! replays the record in reverse to accumulate exact gradients.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    // `b` is indexed modulo its length, which covers equal shapes and the
    // trailing-vector broadcast.
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Softmax { x: Var, axis: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T> },
    Narrow { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    SegmentSum { x: Var, seg: Vec<usize> },
    Scale(Var, T),
    SumAll(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` is not on a path to the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as an `f32` tensor; zeros when `v` is off-path.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape.clone(), g.iter().map(|x| x.as_f32()).collect())
                .unwrap_or_else(|_| Tensor::zeros(shape)),
            None => Tensor::zeros(shape),
        }
    }
}

fn check_finite<T: Real>(values: &[T], op: &'static str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

const ROW_BLOCK: usize = 32;

/// c[m×n] = a[m×k] · b[k×n]. Every output entry accumulates over `k` in
/// ascending order, so each output row depends only on its input row.
fn matmul_kernel<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for r0 in (0..m).step_by(ROW_BLOCK) {
        let r1 = (r0 + ROW_BLOCK).min(m);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for i in r0..r1 {
                let av = a[i * k + p];
                if av != T::zero() {
                    axpy(av, brow, &mut c[i * n..(i + 1) * n]);
                }
            }
        }
    }
    c
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as a leaf; gradients are tracked iff the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = t.data().iter().map(|&x| T::of_f32(x)).collect();
        self.push(t.shape().to_vec(), value, Op::Leaf, t.requires_grad)
    }

    /// Records a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = t.data().iter().map(|&x| T::of_f32(x)).collect();
        self.push(t.shape().to_vec(), value, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        let value = t.data().iter().map(|&x| T::of_f32(x)).collect();
        self.push(t.shape().to_vec(), value, Op::Leaf, false)
    }

    pub fn constant_raw(&mut self, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "constant of shape {shape:?} with {} values",
                value.len()
            )));
        }
        check_finite(&value, "constant")?;
        Ok(self.push(shape, value, Op::Leaf, false))
    }

    /// Leaf with explicit values and gradient tracking, used by reference
    /// checks that perturb values at the tape's precision.
    pub fn leaf_raw(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Result<Var> {
        let v = self.constant_raw(shape, value)?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        let n = shape.iter().product();
        self.push(shape.to_vec(), vec![T::zero(); n], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.iter().map(|x| x.as_f32()).collect())
            .expect("tape values are finite with a valid shape")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!("matmul {sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let c = matmul_kernel(self.value(a), self.value(b), m, k, n);
        check_finite(&c, "matmul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], c, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Add, Some(b)) => self.binary(Binary::Add, a, b),
            (Elementwise::Sub, Some(b)) => self.binary(Binary::Sub, a, b),
            (Elementwise::Mul, Some(b)) => self.binary(Binary::Mul, a, b),
            (Elementwise::Relu, None) => self.unary(Unary::Relu, a),
            (Elementwise::Sigmoid, None) => self.unary(Unary::Sigmoid, a),
            (Elementwise::Tanh, None) => self.unary(Unary::Tanh, a),
            (k, _) => Err(Error::Argument(format!("wrong operand count for {k:?}"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let nb = self.value(b).len();
        let last = *sa.last().unwrap();
        let ok = sa == sb || nb == 1 || (nb == last && sb.iter().rev().skip(1).all(|&d| d == 1));
        if !ok {
            return Err(Error::Dimension(format!("{kind:?} {sa:?} with {sb:?}")));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let out: Vec<T> = va
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = vb[i % nb];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        check_finite(&out, "elementwise")?;
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, Op::Binary(kind, a, b), rg))
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let out: Vec<T> = self
            .value(x)
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(T::zero()),
                Unary::Sigmoid => {
                    if v >= T::zero() {
                        T::one() / (T::one() + (-v).exp())
                    } else {
                        let e = v.exp();
                        e / (T::one() + e)
                    }
                }
                Unary::Tanh => v.tanh(),
            })
            .collect();
        check_finite(&out, "activation")?;
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Unary(kind, x), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("concat of an empty part list".into()))?;
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return Err(Error::Argument(format!("axis {axis} for rank {}", s0.len())));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agree = s.len() == s0.len()
                && s.iter().zip(&s0).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !agree {
                return Err(Error::Dimension(format!("concat {s0:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Argument(format!("axis {axis} for rank {}", shape.len())));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = self.value(x);
        let mut out = vec![T::zero(); v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mx = (0..len).map(|j| v[at(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (v[at(j)] - mx).exp();
                    out[at(j)] = e;
                    sum = sum + e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / sum;
                }
            }
        }
        check_finite(&out, "softmax")?;
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Softmax { x, axis }, rg))
    }

    /// Summed cross-entropy of each logits row against its target; rows
    /// with a `None` target contribute nothing. A 1-D `logits` is one row.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(logits);
        let vocab = *shape.last().unwrap();
        let rows = self.value(logits).len() / vocab;
        if rows != targets.len() {
            return Err(Error::Dimension(format!(
                "{rows} logit rows for {} targets",
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().flatten().find(|&&t| t >= vocab) {
            return Err(Error::Argument(format!("target {t} outside 0..{vocab}")));
        }
        let v = self.value(logits);
        let mut probs = vec![T::zero(); v.len()];
        let mut loss = T::zero();
        for (r, target) in targets.iter().enumerate() {
            let row = &v[r * vocab..(r + 1) * vocab];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&x| (x - mx).exp()).sum();
            let lse = mx + sum.ln();
            for (p, &x) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            if let Some(t) = *target {
                loss = loss + (lse - row[t]);
            }
        }
        check_finite(&[loss], "cross_entropy")?;
        let rg = self.rg(logits);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(vec![1], vec![loss], op, rg))
    }

    /// −log softmax(logits)[target] for a single logits vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let vocab = *self.shape(logits).last().unwrap();
        if self.value(logits).len() != vocab {
            return Err(Error::Dimension("cross_entropy expects one logits row".into()));
        }
        self.cross_entropy_sum(logits, &[Some(target)])
    }

    /// Columns `start..start+len` of the last axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().unwrap();
        if len == 0 || start + len > cols {
            return Err(Error::Dimension(format!("narrow {start}+{len} of {cols} columns")));
        }
        let rows = self.value(x).len() / cols;
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
        }
        let mut s = shape;
        *s.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(s, out, Op::Narrow { x, start }, rg))
    }

    /// Rows of a matrix selected (with repetition) by `idx`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 || idx.is_empty() {
            return Err(Error::Dimension(format!(
                "gather of {} rows from {shape:?}",
                idx.len()
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Argument(format!("row {bad} outside 0..{rows}")));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&v[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![idx.len(), cols], out, Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.gather_rows(x, &[i])
    }

    /// out[s] = Σ_{e: seg[e] = s} x[e], for `segments` output rows. Each
    /// output coordinate is summed in ascending value order, so the result
    /// does not depend on the order of the contributing rows.
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 || shape[0] != seg.len() || segments == 0 {
            return Err(Error::Dimension(format!(
                "segment sum of {shape:?} with {} segment ids into {segments}",
                seg.len()
            )));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= segments) {
            return Err(Error::Argument(format!("segment {bad} outside 0..{segments}")));
        }
        let cols = shape[1];
        let v = self.value(x);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); segments];
        for (e, &s) in seg.iter().enumerate() {
            members[s].push(e);
        }
        let mut out = vec![T::zero(); segments * cols];
        let mut buf: Vec<T> = Vec::new();
        for (s, rows) in members.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            for c in 0..cols {
                buf.clear();
                buf.extend(rows.iter().map(|&e| v[e * cols + c]));
                buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out[s * cols + c] = buf.iter().fold(T::zero(), |acc, &y| acc + y);
            }
        }
        check_finite(&out, "segment_sum")?;
        let rg = self.rg(x);
        Ok(self.push(vec![segments, cols], out, Op::SegmentSum { x, seg: seg.to_vec() }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of_f64(c);
        let out: Vec<T> = self.value(x).iter().map(|&v| v * c).collect();
        check_finite(&out, "scale")?;
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Scale(x, c), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().fold(T::zero(), |a, &b| a + b);
        check_finite(&[s], "sum")?;
        let rg = self.rg(x);
        Ok(self.push(vec![1], vec![s], Op::SumAll(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x), rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Only leaves keep meaningful accumulated values after the sweep;
        // interior gradients are retained for inspection.
        let shapes = self.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(da) = self.acc(grads, *a) {
                    for p in 0..k {
                        let brow = &vb[p * n..(p + 1) * n];
                        for i in 0..m {
                            da[i * k + p] = da[i * k + p] + dot(&g[i * n..(i + 1) * n], brow);
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for p in 0..k {
                        let drow = &mut db[p * n..(p + 1) * n];
                        for i in 0..m {
                            let av = va[i * k + p];
                            if av != T::zero() {
                                axpy(av, &g[i * n..(i + 1) * n], drow);
                            }
                        }
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let nb = vb.len();
                if let Some(da) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        let d = match kind {
                            Binary::Add | Binary::Sub => g[i],
                            Binary::Mul => g[i] * vb[i % nb],
                        };
                        da[i] = da[i] + d;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        let d = match kind {
                            Binary::Add => g[i],
                            Binary::Sub => -g[i],
                            Binary::Mul => g[i] * va[i],
                        };
                        db[i % nb] = db[i % nb] + d;
                    }
                }
            }
            Op::Unary(kind, x) => {
                let y = &node.value;
                let vx = self.value(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        let local = match kind {
                            Unary::Relu => {
                                if vx[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sigmoid => y[i] * (T::one() - y[i]),
                            Unary::Tanh => T::one() - y[i] * y[i],
                        };
                        dx[i] = dx[i] + g[i] * local;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    if let Some(dp) = self.acc(grads, p) {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset..o * total * inner + offset + len];
                            for (d, s) in dp[o * len..(o + 1) * len].iter_mut().zip(src) {
                                *d = *d + *s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let y = &node.value;
                if let Some(dx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let s = (0..len).fold(T::zero(), |acc, j| acc + y[at(j)] * g[at(j)]);
                            for j in 0..len {
                                dx[at(j)] = dx[at(j)] + y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let vocab = probs.len() / targets.len();
                if let Some(dl) = self.acc(grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..vocab {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            let k = r * vocab + j;
                            dl[k] = dl[k] + g[0] * (probs[k] - onehot);
                        }
                    }
                }
            }
            Op::Narrow { x, start } => {
                let cols = *self.shape(*x).last().unwrap();
                let len = *node.shape.last().unwrap();
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, gr) in g.chunks_exact(len).enumerate() {
                        let dst = &mut dx[r * cols + start..r * cols + start + len];
                        for (d, s) in dst.iter_mut().zip(gr) {
                            *d = *d + *s;
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let cols = node.shape[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        for (d, s) in dx[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                            *d = *d + *s;
                        }
                    }
                }
            }
            Op::SegmentSum { x, seg } => {
                let cols = node.shape[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (e, &s) in seg.iter().enumerate() {
                        let src = &g[s * cols..(s + 1) * cols];
                        for (d, v) in dx[e * cols..(e + 1) * cols].iter_mut().zip(src) {
                            *d = *d + *v;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, s) in dx.iter_mut().zip(g) {
                        *d = *d + *s * *c;
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for d in dx.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, s) in dx.iter_mut().zip(g) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}
