use std::collections::BTreeMap;

use super::tensor::{gemm, gemm_strided, Tensor};
use super::DiffError;

/// Stable index of a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    MatMul(NodeId, NodeId),
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        kernel: usize,
        stride: usize,
    },
    Concat(Vec<NodeId>),
    LogSoftmax(NodeId),
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    GatherRows {
        input: NodeId,
        rows: Vec<usize>,
    },
    /// Scalar loss with a precomputed adjoint w.r.t. its single input.
    Custom {
        input: NodeId,
        adjoint: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    is_param: bool,
    requires_grad: bool,
}

/// Append-only computation tape. Inputs always precede outputs, so the node
/// order is a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    tanh_adjoint_scale: Option<f64>,
}

/// Gradients keyed by parameter node.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn mismatch(msg: String) -> DiffError {
    DiffError::ShapeMismatch(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fault-injection hook: scales the tanh adjoint so gradient checks can
    /// be shown to fail.
    #[doc(hidden)]
    pub fn corrupt_tanh_adjoint(&mut self, scale: f64) {
        self.tanh_adjoint_scale = Some(scale);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, true, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, false, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, is_param: bool, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            is_param,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push_raw(op, value, false, requires_grad)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId, DiffError> {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(op, out, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `x[..., d] + bias[d]`, broadcast over every leading index.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, DiffError> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(mismatch(format!(
                "add_bias: {:?} + {:?}",
                self.shape(x),
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), out, &[x, bias]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out = self.map(x, |v| v * factor);
        self.push(Op::Scale(x, factor), out, &[x])
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        Tensor::new(v.shape().to_vec(), data).expect("same shape")
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.map(x, f64::tanh);
        self.push(Op::Tanh(x), out, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.map(x, sigmoid);
        self.push(Op::Sigmoid(x), out, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.map(x, |v| v.max(0.0));
        self.push(Op::Relu(x), out, &[x])
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let out = self.map(x, f64::exp);
        self.push(Op::Exp(x), out, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let out = self.map(x, f64::ln);
        self.push(Op::Log(x), out, &[x])
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch(format!("matmul: {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul(a, b), out, &[a, b]))
    }

    /// Valid-padding strided 1-D convolution over time-major input.
    ///
    /// `input` is `[batch, len, c_in]` or `[len, c_in]`, `weight` is
    /// `[kernel · c_in, c_out]` (tap-major rows), `bias` is `[c_out]`.
    /// Output length is `floor((len − kernel) / stride) + 1`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId, DiffError> {
        let (batch, len, c_in) = conv_dims(self.shape(input))?;
        let ws = self.shape(weight).to_vec();
        if kernel == 0 || stride == 0 || ws.len() != 2 || ws[0] != kernel * c_in {
            return Err(mismatch(format!(
                "conv1d: input {:?}, weight {:?}, kernel {kernel}, stride {stride}",
                self.shape(input),
                ws
            )));
        }
        let c_out = ws[1];
        if self.shape(bias) != [c_out] {
            return Err(mismatch(format!("conv1d bias {:?}", self.shape(bias))));
        }
        if len < kernel {
            return Err(mismatch(format!("conv1d: length {len} shorter than kernel {kernel}")));
        }
        let out_len = conv_out_len(len, kernel, stride);
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; batch * out_len * c_out];
        for bi in 0..batch {
            let xs = &x[bi * len * c_in..(bi + 1) * len * c_in];
            let ys = &mut out[bi * out_len * c_out..(bi + 1) * out_len * c_out];
            gemm_strided(
                out_len,
                kernel * c_in,
                c_out,
                xs,
                ((stride * c_in) as isize, 1),
                w,
                (c_out as isize, 1),
                ys,
                false,
            );
            for row in ys.chunks_mut(c_out) {
                for (v, bb) in row.iter_mut().zip(b) {
                    *v += bb;
                }
            }
        }
        let shape = if self.shape(input).len() == 3 {
            vec![batch, out_len, c_out]
        } else {
            vec![out_len, c_out]
        };
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::Conv1d {
                input,
                weight,
                bias,
                kernel,
                stride,
            },
            out,
            &[input, weight, bias],
        ))
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| mismatch("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(mismatch(format!("concat: {:?} vs {:?}", self.shape(first), s)));
            }
            total += self.value(p).last_dim();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(Op::Concat(parts.to_vec()), out, parts))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let d = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|e| *e -= lse);
        }
        let out = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        self.push(Op::LogSoftmax(x), out, &[x])
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId, DiffError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(mismatch(format!("slice {start}..{end} on axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let width = (end - start) * inner;
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            out.extend_from_slice(&src[base..base + width]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        let out = Tensor::new(new_shape, out)?;
        Ok(self.push(Op::Slice { input: x, axis, start }, out, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, DiffError> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), out, &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(s), &[x])
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let d = v.last_dim();
        let data: Vec<f64> = v.data().chunks(d).map(|r| r.iter().sum()).collect();
        let mut shape = v.shape()[..v.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let out = Tensor::new(shape, data).expect("row count");
        self.push(Op::SumLast(x), out, &[x])
    }

    /// Selects rows of `x` viewed as `[rows, last_dim]`; output is
    /// `[rows.len(), last_dim]`.
    pub fn gather_rows(&mut self, x: NodeId, rows: Vec<usize>) -> Result<NodeId, DiffError> {
        let v = self.value(x);
        let d = v.last_dim();
        let n = v.rows();
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(mismatch(format!("gather_rows: index out of {n} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            out.extend_from_slice(v.row(r));
        }
        let out = Tensor::matrix(rows.len(), d, out)?;
        Ok(self.push(Op::GatherRows { input: x, rows }, out, &[x]))
    }

    /// Records a scalar whose adjoint w.r.t. `input` was computed by the caller.
    pub fn custom_scalar(&mut self, input: NodeId, value: f64, adjoint: Tensor) -> Result<NodeId, DiffError> {
        if adjoint.shape() != self.shape(input) {
            return Err(mismatch(format!(
                "custom adjoint {:?} vs input {:?}",
                adjoint.shape(),
                self.shape(input)
            )));
        }
        Ok(self.push(Op::Custom { input, adjoint }, Tensor::scalar(value), &[input]))
    }

    /// Reverse accumulation from a scalar `loss` to every parameter leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.is_param {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.is_param {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.grads.insert(NodeId(idx), g);
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                self.accumulate(grads, *a, zip(g, vb, |g, x| g * x));
                self.accumulate(grads, *b, zip(g, va, |g, x| g * x));
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*bias) {
                    let d = g.last_dim();
                    let mut gb = vec![0.0; d];
                    for row in g.data().chunks(d) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::vector(gb));
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, scaled(g, *f)),
            Op::Tanh(x) => {
                let s = self.tanh_adjoint_scale.unwrap_or(1.0);
                self.accumulate(grads, *x, zip(g, y, |g, y| s * g * (1.0 - y * y)));
            }
            Op::Sigmoid(x) => self.accumulate(grads, *x, zip(g, y, |g, y| g * y * (1.0 - y))),
            Op::Relu(x) => {
                let vx = self.value(*x);
                self.accumulate(grads, *x, zip(g, vx, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Exp(x) => self.accumulate(grads, *x, zip(g, y, |g, y| g * y)),
            Op::Log(x) => {
                let vx = self.value(*x);
                self.accumulate(grads, *x, zip(g, vx, |g, x| g / x));
            }
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_strided(m, n, k, g.data(), (n as isize, 1), vb.data(), (1, n as isize), &mut ga, false);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, ga).expect("shape"));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_strided(k, m, n, va.data(), (1, k as isize), g.data(), (n as isize, 1), &mut gb, false);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, gb).expect("shape"));
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                kernel,
                stride,
            } => self.conv1d_backward(*input, *weight, *bias, *kernel, *stride, g, grads),
            Op::Concat(parts) => {
                let total = g.last_dim();
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let d = vp.last_dim();
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(rows * d);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + d]);
                        }
                        self.accumulate(grads, p, Tensor::new(vp.shape().to_vec(), gp).expect("shape"));
                    }
                    offset += d;
                }
            }
            Op::LogSoftmax(x) => {
                let d = y.last_dim();
                let mut gx = Vec::with_capacity(y.len());
                for (gr, yr) in g.data().chunks(d).zip(y.data().chunks(d)) {
                    let gs: f64 = gr.iter().sum();
                    gx.extend(gr.iter().zip(yr).map(|(gi, yi)| gi - yi.exp() * gs));
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx).expect("shape"));
            }
            Op::Slice { input, axis, start } => {
                let shape = self.shape(*input);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let width = y.shape()[*axis] * inner;
                let mut gx = Tensor::zeros(shape);
                for o in 0..outer {
                    let base = o * shape[*axis] * inner + start * inner;
                    gx.data_mut()[base..base + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshaped(self.shape(*x)).expect("same size");
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gx = Tensor::filled(self.shape(*x), g.item());
                self.accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let gx = Tensor::filled(self.shape(*x), g.item() / n);
                self.accumulate(grads, *x, gx);
            }
            Op::SumLast(x) => {
                let vx = self.value(*x);
                let d = vx.last_dim();
                let mut gx = Vec::with_capacity(vx.len());
                for &gi in g.data() {
                    gx.extend(std::iter::repeat_n(gi, d));
                }
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), gx).expect("shape"));
            }
            Op::GatherRows { input, rows } => {
                let mut gx = Tensor::zeros(self.shape(*input));
                let d = g.last_dim();
                for (i, &r) in rows.iter().enumerate() {
                    let dst = &mut gx.data_mut()[r * d..(r + 1) * d];
                    for (a, b) in dst.iter_mut().zip(&g.data()[i * d..(i + 1) * d]) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Custom { input, adjoint } => {
                self.accumulate(grads, *input, scaled(adjoint, g.item()));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(
        &self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        kernel: usize,
        stride: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (batch, len, c_in) = conv_dims(self.shape(input)).expect("checked in forward");
        let c_out = self.shape(weight)[1];
        let out_len = conv_out_len(len, kernel, stride);
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let kc = kernel * c_in;

        if self.wants(weight) {
            let mut gw = vec![0.0; kc * c_out];
            for bi in 0..batch {
                let xs = &x[bi * len * c_in..(bi + 1) * len * c_in];
                let gs = &g.data()[bi * out_len * c_out..(bi + 1) * out_len * c_out];
                gemm_strided(
                    kc,
                    out_len,
                    c_out,
                    xs,
                    (1, (stride * c_in) as isize),
                    gs,
                    (c_out as isize, 1),
                    &mut gw,
                    true,
                );
            }
            self.accumulate(grads, weight, Tensor::matrix(kc, c_out, gw).expect("shape"));
        }
        if self.wants(bias) {
            let mut gb = vec![0.0; c_out];
            for row in g.data().chunks(c_out) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            self.accumulate(grads, bias, Tensor::vector(gb));
        }
        if self.wants(input) {
            let mut gx = Tensor::zeros(self.shape(input));
            let mut cols = vec![0.0; out_len * kc];
            for bi in 0..batch {
                let gs = &g.data()[bi * out_len * c_out..(bi + 1) * out_len * c_out];
                gemm_strided(
                    out_len,
                    c_out,
                    kc,
                    gs,
                    (c_out as isize, 1),
                    w,
                    (1, c_out as isize),
                    &mut cols,
                    false,
                );
                let dst = &mut gx.data_mut()[bi * len * c_in..(bi + 1) * len * c_in];
                for t in 0..out_len {
                    let base = t * stride * c_in;
                    for (a, b) in dst[base..base + kc].iter_mut().zip(&cols[t * kc..(t + 1) * kc]) {
                        *a += b;
                    }
                }
            }
            self.accumulate(grads, input, gx);
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.wants(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

fn conv_dims(shape: &[usize]) -> Result<(usize, usize, usize), DiffError> {
    match *shape {
        [b, l, c] => Ok((b, l, c)),
        [l, c] => Ok((1, l, c)),
        _ => Err(mismatch(format!("conv1d input must be rank 2 or 3, got {shape:?}"))),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn scaled(t: &Tensor, f: f64) -> Tensor {
    let data = t.data().iter().map(|v| v * f).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}
