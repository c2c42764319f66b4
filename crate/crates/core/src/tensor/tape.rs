use super::kernels;
use super::{lit, Result, Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveKind {
    MatMul,
    Add,
    Mul,
    Sub,
    ConcatLastDim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Sigmoid,
    Relu,
    SoftmaxLastDim,
    LayerNorm,
    Log,
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    /// `b` is a vector broadcast over the rows of `a`.
    Rows,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Minimum(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Scale(Var, T),
    Shift(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize, usize),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    Pick(Var, Vec<usize>),
    Detach,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Node ids grow monotonically and every op only references earlier
/// nodes, so the node list is already in topological order.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], one slot per node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => Tensor::zeros(&self.shapes[v.0]),
            None => Tensor::zeros(&[]),
        }
    }

    pub fn get_opt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn check_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
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

    fn push(&mut self, op: &'static str, value: Tensor<T>, kind: Op<T>, inputs: &[Var]) -> Result<Var> {
        check_finite(op, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownNode(v.0))
        }
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        check_finite("leaf", &t)?;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        check_finite("constant", &t)?;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn forward_primitive(&mut self, kind: PrimitiveKind, a: Var, b: Var) -> Result<Var> {
        match kind {
            PrimitiveKind::MatMul => self.matmul(a, b),
            PrimitiveKind::Add => self.add(a, b),
            PrimitiveKind::Mul => self.mul(a, b),
            PrimitiveKind::Sub => self.sub(a, b),
            PrimitiveKind::ConcatLastDim => self.concat_cols(&[a, b]),
        }
    }

    /// `params` carries `(gain, bias)` and is required for layer norm only.
    pub fn forward_unary(&mut self, kind: UnaryKind, a: Var, params: Option<(Var, Var)>) -> Result<Var> {
        match kind {
            UnaryKind::Tanh => self.tanh(a),
            UnaryKind::Sigmoid => self.sigmoid(a),
            UnaryKind::Relu => self.relu(a),
            UnaryKind::SoftmaxLastDim => self.softmax(a),
            UnaryKind::Log => self.log(a),
            UnaryKind::LayerNorm => {
                let (g, b) = params.ok_or_else(|| TensorError::Invalid("layer_norm needs gain and bias".into()))?;
                self.layer_norm(a, g, b, lit(1e-5))
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return Ok(Bcast::Same);
        }
        let (_, cols) = ta.rows_cols();
        if tb.shape().len() == 1 && tb.shape()[0] == cols && ta.shape().len() >= 2 {
            return Ok(Bcast::Rows);
        }
        Err(TensorError::ShapeMismatch {
            op,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })
    }

    fn elementwise(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Bcast)> {
        let mode = self.bcast(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data: Vec<T> = match mode {
            Bcast::Same => ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Rows => {
                let cols = tb.numel();
                ta.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, tb.data()[i % cols]))
                    .collect()
            }
        };
        Ok((Tensor::new(ta.shape().to_vec(), data)?, mode))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.elementwise("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b, m), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.elementwise("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b, m), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.elementwise("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b, m), &[a, b])
    }

    /// Elementwise minimum of two equal-shape tensors; ties route the
    /// gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.elementwise("minimum", a, b, |x, y| if x <= y { x } else { y })?;
        if !matches!(m, Bcast::Same) {
            let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
            return Err(TensorError::ShapeMismatch {
                op: "minimum",
                lhs: sa,
                rhs: sb,
            });
        }
        self.push("minimum", t, Op::Minimum(a, b), &[a, b])
    }

    /// Concatenates along the last dimension; all inputs share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let lead = self.value(first).shape();
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let rows = self.value(first).rows_cols().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last_dim",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(self.value(p).rows_cols().1);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push("concat_last_dim", Tensor::new(shape, data)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Stacks 2-D tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let cols = self.value(first).rows_cols().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.shape()[1] != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        self.push("concat_rows", Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(parts.to_vec()), parts)
    }

    fn unary(&mut self, op: &'static str, a: Var, f: impl Fn(T) -> T, kind: Op<T>) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(f);
        self.push(op, t, kind, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= T::zero()) {
            return Err(TensorError::LogDomain {
                value: bad.to_f64().unwrap_or(f64::NAN),
            });
        }
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        self.unary("scale", a, |x| x * k, Op::Scale(a, k))
    }

    pub fn shift(&mut self, a: Var, k: T) -> Result<Var> {
        self.unary("shift", a, |x| x + k, Op::Shift(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    /// Clamps into `[lo, hi]`; the gradient is zero wherever clamping bites.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.unary("clamp", a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    /// Returns a copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).clone();
        self.push("detach", t, Op::Detach, &[])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let (rows, cols) = t.rows_cols();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            softmax_row(&mut out[r * cols..(r + 1) * cols]);
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", v, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let (rows, cols) = t.rows_cols();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().fold(T::zero(), |s, &x| s + (x - max).exp()).ln() + max;
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        self.push("log_softmax", v, Op::LogSoftmax(a), &[a])
    }

    /// Normalizes each row to zero mean and unit (population) variance,
    /// then applies `gain` and `bias` over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        for v in [x, gain, bias] {
            self.check(v)?;
        }
        let t = self.value(x);
        let (rows, cols) = t.rows_cols();
        for p in [gain, bias] {
            if self.value(p).shape() != [cols] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: t.shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let n = T::from_usize(cols).unwrap();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).data().iter().fold(T::zero(), |s, &x| s + x);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(TensorError::Invalid("mean of empty tensor".into()));
        }
        let s = t.data().iter().fold(T::zero(), |s, &x| s + x) / T::from_usize(t.numel()).unwrap();
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let (rows, cols) = t.rows_cols();
        if t.shape().len() != 2 || start >= end || end > cols {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: end,
                bound: cols,
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + end]);
        }
        self.push("slice_cols", Tensor::new(vec![rows, w], data)?, Op::SliceCols(a, start, end), &[a])
    }

    /// Gathers rows of a 2-D tensor; indices may repeat.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let (rows, cols) = t.rows_cols();
        if t.shape().len() != 2 {
            return Err(TensorError::Invalid(format!("select_rows needs a matrix, got {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::OutOfRange {
                    op: "select_rows",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        self.push(
            "select_rows",
            Tensor::new(vec![idx.len(), cols], data)?,
            Op::SelectRows(a, idx.to_vec()),
            &[a],
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(TensorError::Invalid(format!("transpose needs a matrix, got {:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let data = kernels::transpose(t.data(), r, c);
        self.push("transpose", Tensor::new(vec![c, r], data)?, Op::Transpose(a), &[a])
    }

    /// Picks one column per row: `out[r] = a[r, idx[r]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let (rows, cols) = t.rows_cols();
        if idx.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                lhs: t.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(rows);
        for (r, &c) in idx.iter().enumerate() {
            if c >= cols {
                return Err(TensorError::OutOfRange {
                    op: "pick",
                    index: c,
                    bound: cols,
                });
            }
            data.push(t.data()[r * cols + c]);
        }
        self.push("pick", Tensor::vector(data), Op::Pick(a, idx.to_vec()), &[a])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).expect("gradient shape"))
            })
            .chain(std::iter::repeat_with(|| None))
            .take(self.nodes.len())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.wants(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
        f(buf);
    }

    fn reduce_bcast(&self, grads: &mut [Option<Vec<T>>], b: Var, mode: Bcast, contrib: impl Fn(usize) -> T, len: usize) {
        match mode {
            Bcast::Same => self.accumulate(grads, b, |gb| {
                for (i, x) in gb.iter_mut().enumerate() {
                    *x = *x + contrib(i);
                }
            }),
            Bcast::Rows => self.accumulate(grads, b, |gb| {
                let cols = gb.len();
                for i in 0..len {
                    gb[i % cols] = gb[i % cols] + contrib(i);
                }
            }),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    let da = kernels::matmul_bt(g, tb.data(), m, n, k);
                    self.accumulate(grads, *a, |buf| add_into(buf, &da));
                }
                if self.wants(*b) {
                    let db = kernels::matmul_at(ta.data(), g, m, k, n);
                    self.accumulate(grads, *b, |buf| add_into(buf, &db));
                }
            }
            Op::Add(a, b, mode) => {
                self.accumulate(grads, *a, |buf| add_into(buf, g));
                self.reduce_bcast(grads, *b, *mode, |i| g[i], g.len());
            }
            Op::Sub(a, b, mode) => {
                self.accumulate(grads, *a, |buf| add_into(buf, g));
                self.reduce_bcast(grads, *b, *mode, |i| -g[i], g.len());
            }
            Op::Mul(a, b, mode) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let bl = tb.len();
                self.accumulate(grads, *a, |buf| {
                    for (i, x) in buf.iter_mut().enumerate() {
                        *x = *x + g[i] * tb[i % bl];
                    }
                });
                self.reduce_bcast(grads, *b, *mode, |i| g[i] * ta[i], g.len());
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        if ta[i] <= tb[i] {
                            buf[i] = buf[i] + g[i];
                        }
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for i in 0..buf.len() {
                        if ta[i] > tb[i] {
                            buf[i] = buf[i] + g[i];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).rows_cols().1;
                    self.accumulate(grads, p, |buf| {
                        for r in 0..rows {
                            for c in 0..w {
                                buf[r * w + c] = buf[r * w + c] + g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.accumulate(grads, p, |buf| add_into(buf, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Tanh(a) => self.accumulate(grads, *a, |buf| {
                for i in 0..buf.len() {
                    buf[i] = buf[i] + g[i] * (T::one() - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |buf| {
                for i in 0..buf.len() {
                    buf[i] = buf[i] + g[i] * out[i] * (T::one() - out[i]);
                }
            }),
            Op::Relu(a) => self.accumulate(grads, *a, |buf| {
                for i in 0..buf.len() {
                    if out[i] > T::zero() {
                        buf[i] = buf[i] + g[i];
                    }
                }
            }),
            Op::Exp(a) => self.accumulate(grads, *a, |buf| {
                for i in 0..buf.len() {
                    buf[i] = buf[i] + g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] = buf[i] + g[i] / x[i];
                    }
                })
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] = buf[i] + g[i] * lit::<T>(2.0) * x[i];
                    }
                })
            }
            Op::Softmax(a) => {
                let (rows, cols) = node.value.rows_cols();
                self.accumulate(grads, *a, |buf| {
                    for r in 0..rows {
                        let s = r * cols;
                        let dot = (0..cols).fold(T::zero(), |acc, c| acc + g[s + c] * out[s + c]);
                        for c in 0..cols {
                            buf[s + c] = buf[s + c] + out[s + c] * (g[s + c] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let (rows, cols) = node.value.rows_cols();
                self.accumulate(grads, *a, |buf| {
                    for r in 0..rows {
                        let s = r * cols;
                        let gsum = (0..cols).fold(T::zero(), |acc, c| acc + g[s + c]);
                        for c in 0..cols {
                            buf[s + c] = buf[s + c] + g[s + c] - out[s + c].exp() * gsum;
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = node.value.rows_cols();
                let gv = self.value(*gain).data();
                self.accumulate(grads, *gain, |buf| {
                    for i in 0..g.len() {
                        buf[i % cols] = buf[i % cols] + g[i] * xhat[i];
                    }
                });
                self.accumulate(grads, *bias, |buf| {
                    for i in 0..g.len() {
                        buf[i % cols] = buf[i % cols] + g[i];
                    }
                });
                let n = T::from_usize(cols).unwrap();
                self.accumulate(grads, *x, |buf| {
                    for r in 0..rows {
                        let s = r * cols;
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in 0..cols {
                            let d = g[s + c] * gv[c];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xhat[s + c];
                        }
                        for c in 0..cols {
                            let d = g[s + c] * gv[c];
                            buf[s + c] = buf[s + c] + inv_std[r] / n * (n * d - sum_d - xhat[s + c] * sum_dx);
                        }
                    }
                });
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, |buf| {
                for i in 0..buf.len() {
                    buf[i] = buf[i] + g[i] * *k;
                }
            }),
            Op::Shift(a) => self.accumulate(grads, *a, |buf| add_into(buf, g)),
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            buf[i] = buf[i] + g[i];
                        }
                    }
                })
            }
            Op::Sum(a) => self.accumulate(grads, *a, |buf| {
                for x in buf.iter_mut() {
                    *x = *x + g[0];
                }
            }),
            Op::Mean(a) => self.accumulate(grads, *a, |buf| {
                let k = g[0] / T::from_usize(buf.len()).unwrap();
                for x in buf.iter_mut() {
                    *x = *x + k;
                }
            }),
            Op::SliceCols(a, start, end) => {
                let (rows, cols) = self.value(*a).rows_cols();
                let w = end - start;
                self.accumulate(grads, *a, |buf| {
                    for r in 0..rows {
                        for c in 0..w {
                            buf[r * cols + start + c] = buf[r * cols + start + c] + g[r * w + c];
                        }
                    }
                })
            }
            Op::SelectRows(a, idx) => {
                let cols = self.value(*a).rows_cols().1;
                self.accumulate(grads, *a, |buf| {
                    for (k, &r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            buf[r * cols + c] = buf[r * cols + c] + g[k * cols + c];
                        }
                    }
                })
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let back = kernels::transpose(g, c, r);
                self.accumulate(grads, *a, |buf| add_into(buf, &back));
            }
            Op::Pick(a, idx) => {
                let cols = self.value(*a).rows_cols().1;
                self.accumulate(grads, *a, |buf| {
                    for (r, &c) in idx.iter().enumerate() {
                        buf[r * cols + c] = buf[r * cols + c] + g[r];
                    }
                })
            }
        }
    }
}

fn add_into<T: Scalar>(buf: &mut [T], g: &[T]) {
    for (b, &x) in buf.iter_mut().zip(g) {
        *b = *b + x;
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place max-subtracted softmax of one row.
pub(crate) fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}
