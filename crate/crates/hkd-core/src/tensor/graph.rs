//! Reverse-mode automatic differentiation over [`Tensor4`].
//!
//! A [`Graph`] is a tape: every operation appends a node whose parents
//! already sit on the tape, so reverse iteration is automatically a valid
//! topological order. [`Graph::backward`] requires the designated output to
//! be scalar and fills the gradient slot of every node the output depends
//! on. Gradient accumulation walks parents in a fixed order, so runs are
//! bit-reproducible.

use super::conv::{avgpool2d_backward, avgpool2d_forward, conv2d_backward, conv2d_forward};
use super::gemm::{gemm_nn, gemm_nt, transpose};
use super::{Scalar, Shape4, Tensor4, TensorError};
use crate::parallel::Execution;

/// Probabilities are clamped to this floor before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum OpKind<T> {
    /// Trainable input; receives a gradient.
    Leaf,
    /// Non-trainable input (data, frozen targets); no gradient.
    Constant,
    Conv2d { stride: (usize, usize), pad: (usize, usize) },
    AvgPool2d { win: (usize, usize), stride: (usize, usize) },
    Elu,
    Dense,
    SoftmaxT { tau: T },
    LogSoftmaxT { tau: T },
    Pick { indices: Vec<usize> },
    LnFloored,
    Add,
    Mul,
    Scale { c: T },
    SumAll,
    SumMaps,
}

struct Node<T: Scalar> {
    op: OpKind<T>,
    parents: Vec<NodeId>,
    value: Tensor4<T>,
    grad: Option<Tensor4<T>>,
    requires_grad: bool,
}

/// A single-output compute tape.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    exec: Execution,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new(Execution::default())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(exec: Execution) -> Self {
        Self { nodes: Vec::new(), exec }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor4<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape4 {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the designated output w.r.t. this node, if backward has
    /// run and the node lies on a differentiable path.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor4<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, op: OpKind<T>, parents: Vec<NodeId>, value: Tensor4<T>) -> NodeId {
        let requires_grad = matches!(op, OpKind::Leaf)
            || parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { op, parents, value, grad: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn check_parent(&self, op: &'static str, id: NodeId) -> Result<(), TensorError> {
        if id.0 >= self.nodes.len() {
            return Err(TensorError::ForeignNode { op, node: id.0 });
        }
        Ok(())
    }

    /// Trainable leaf (model parameter or checked input).
    pub fn leaf(&mut self, value: Tensor4<T>) -> NodeId {
        self.push(OpKind::Leaf, vec![], value)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor4<T>) -> NodeId {
        self.push(OpKind::Constant, vec![], value)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId, TensorError> {
        for id in [x, kernel, bias] {
            self.check_parent("conv2d", id)?;
        }
        let value = conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
            stride,
            pad,
            self.exec,
        )?;
        Ok(self.push(OpKind::Conv2d { stride, pad }, vec![x, kernel, bias], value))
    }

    pub fn avgpool2d(
        &mut self,
        x: NodeId,
        win: (usize, usize),
        stride: (usize, usize),
    ) -> Result<NodeId, TensorError> {
        self.check_parent("avgpool2d", x)?;
        let value = avgpool2d_forward(&self.nodes[x.0].value, win, stride, self.exec)?;
        Ok(self.push(OpKind::AvgPool2d { win, stride }, vec![x], value))
    }

    pub fn elu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check_parent("elu", x)?;
        let value = self.nodes[x.0].value.map_values(elu_scalar);
        Ok(self.push(OpKind::Elu, vec![x], value))
    }

    /// Fully connected head over flattened per-sample features; requires the
    /// spatial extent to be already reduced to 1×1.
    pub fn dense(&mut self, x: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        for id in [x, weights, bias] {
            self.check_parent("dense", id)?;
        }
        let xs = self.nodes[x.0].value.shape();
        let ws = self.nodes[weights.0].value.shape();
        let bs = self.nodes[bias.0].value.shape();
        if xs.height != 1 || xs.width != 1 {
            return Err(TensorError::InvalidShape {
                op: "dense",
                shape: xs,
                reason: "spatial extent must be pooled to 1×1 first".into(),
            });
        }
        if ws.maps != xs.maps || ws.height != 1 || ws.width != 1 {
            return Err(TensorError::ShapeMismatch { op: "dense", left: xs, right: ws });
        }
        if bs.maps != ws.batch || bs.batch != 1 {
            return Err(TensorError::ShapeMismatch { op: "dense", left: ws, right: bs });
        }
        let (b, n, m) = (xs.batch, xs.maps, ws.batch);
        let mut value = Tensor4::zeros(Shape4::new(b, m, 1, 1));
        gemm_nt(
            self.nodes[x.0].value.values(),
            self.nodes[weights.0].value.values(),
            value.values_mut(),
            b,
            n,
            m,
            Execution::Sequential,
        );
        let bias_v = self.nodes[bias.0].value.values();
        for bi in 0..b {
            for j in 0..m {
                value.values_mut()[bi * m + j] += bias_v[j];
            }
        }
        Ok(self.push(OpKind::Dense, vec![x, weights, bias], value))
    }

    pub fn softmax_t(&mut self, x: NodeId, tau: T) -> Result<NodeId, TensorError> {
        self.check_parent("softmax", x)?;
        let value = rowwise_softmax(&self.nodes[x.0].value, tau, false)?;
        Ok(self.push(OpKind::SoftmaxT { tau }, vec![x], value))
    }

    pub fn log_softmax_t(&mut self, x: NodeId, tau: T) -> Result<NodeId, TensorError> {
        self.check_parent("log_softmax", x)?;
        let value = rowwise_softmax(&self.nodes[x.0].value, tau, true)?;
        Ok(self.push(OpKind::LogSoftmaxT { tau }, vec![x], value))
    }

    /// Selects one entry per batch row: `out[b] = x[b, indices[b]]`.
    pub fn pick(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId, TensorError> {
        self.check_parent("pick", x)?;
        let xs = self.nodes[x.0].value.shape();
        if xs.height != 1 || xs.width != 1 || indices.len() != xs.batch {
            return Err(TensorError::InvalidShape {
                op: "pick",
                shape: xs,
                reason: format!("need (batch={},c,1,1) input", indices.len()),
            });
        }
        for &i in indices {
            if i >= xs.maps {
                return Err(TensorError::IndexOutOfRange { op: "pick", index: i, classes: xs.maps });
            }
        }
        let src = &self.nodes[x.0].value;
        let picked: Vec<T> = indices.iter().enumerate().map(|(b, &i)| src.at(b, i, 0, 0)).collect();
        let value = Tensor4::column(&picked);
        Ok(self.push(OpKind::Pick { indices: indices.to_vec() }, vec![x], value))
    }

    /// `ln(max(x, 1e-12))`; below the floor the gradient is zero.
    pub fn ln_floored(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check_parent("ln", x)?;
        let floor = T::of_f64(PROB_FLOOR);
        let value = self.nodes[x.0].value.map_values(|v| v.max(floor).ln());
        Ok(self.push(OpKind::LnFloored, vec![x], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary("add", OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary("mul", OpKind::Mul, a, b, |x, y| x * y)
    }

    fn binary(
        &mut self,
        name: &'static str,
        op: OpKind<T>,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
    ) -> Result<NodeId, TensorError> {
        self.check_parent(name, a)?;
        self.check_parent(name, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch { op: name, left: va.shape(), right: vb.shape() });
        }
        let values: Vec<T> = va.values().iter().zip(vb.values()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor4::from_vec(va.shape(), values).expect("same shape");
        Ok(self.push(op, vec![a, b], value))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId, TensorError> {
        self.check_parent("scale", x)?;
        let value = self.nodes[x.0].value.map_values(|v| v * c);
        Ok(self.push(OpKind::Scale { c }, vec![x], value))
    }

    /// Full reduction to a `(1,1,1,1)` scalar.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check_parent("sum", x)?;
        let value = Tensor4::scalar(self.nodes[x.0].value.sum());
        Ok(self.push(OpKind::SumAll, vec![x], value))
    }

    /// Per-sample reduction over the maps axis: `(b,c,1,1)` → `(b,1,1,1)`.
    pub fn sum_maps(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check_parent("sum_maps", x)?;
        let xs = self.nodes[x.0].value.shape();
        if xs.height != 1 || xs.width != 1 {
            return Err(TensorError::InvalidShape {
                op: "sum_maps",
                shape: xs,
                reason: "expects (batch, c, 1, 1)".into(),
            });
        }
        let src = &self.nodes[x.0].value;
        let sums: Vec<T> = (0..xs.batch)
            .map(|b| {
                let mut acc = T::zero();
                for &v in &src.values()[b * xs.maps..(b + 1) * xs.maps] {
                    acc += v;
                }
                acc
            })
            .collect();
        let value = Tensor4::column(&sums);
        Ok(self.push(OpKind::SumMaps, vec![x], value))
    }

    /// Reverse accumulation from the designated scalar output.
    pub fn backward(&mut self, output: NodeId) -> Result<(), TensorError> {
        self.check_parent("backward", output)?;
        let out_shape = self.nodes[output.0].value.shape();
        if !out_shape.is_scalar() {
            return Err(TensorError::NonScalarOutput(out_shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        self.nodes[output.0].grad = Some(Tensor4::scalar(T::one()));

        for id in (0..=output.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id);
        }
        Ok(())
    }

    /// Adds `delta` into the gradient slot of `parent` if it participates.
    fn accumulate(&mut self, parent: NodeId, delta: Tensor4<T>) {
        let node = &mut self.nodes[parent.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.axpy_in_place(T::one(), &delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, id: usize) {
        let updates = self.parent_deltas(id);
        for (parent, delta) in updates {
            self.accumulate(parent, delta);
        }
    }

    /// Gradient contributions of node `id` to each of its parents.
    fn parent_deltas(&self, id: usize) -> Vec<(NodeId, Tensor4<T>)> {
        let node = &self.nodes[id];
        let dy = node.grad.as_ref().expect("checked by caller").clone();
        let parents = node.parents.clone();
        let op = node.op.clone();
        let value = &node.value;
        let parent_requires: Vec<bool> =
            parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
        let parent_value = |p: NodeId| &self.nodes[p.0].value;
        let mut updates: Vec<(NodeId, Tensor4<T>)> = Vec::new();

        match op {
            OpKind::Leaf | OpKind::Constant => {}
            OpKind::Conv2d { stride, pad } => {
                let grads = conv2d_backward(
                    parent_value(parents[0]),
                    parent_value(parents[1]),
                    &dy,
                    stride,
                    pad,
                    parent_requires[0],
                    self.exec,
                );
                if let Some(dx) = grads.dx {
                    updates.push((parents[0], dx));
                }
                if parent_requires[1] {
                    updates.push((parents[1], grads.dk));
                }
                if parent_requires[2] {
                    updates.push((parents[2], grads.db));
                }
            }
            OpKind::AvgPool2d { win, stride } => {
                if parent_requires[0] {
                    let dx = avgpool2d_backward(parent_value(parents[0]).shape(), &dy, win, stride, self.exec);
                    updates.push((parents[0], dx));
                }
            }
            OpKind::Elu => {
                if parent_requires[0] {
                    let x = parent_value(parents[0]);
                    let mut dx = Tensor4::zeros(x.shape());
                    for ((d, &g), (&xv, &yv)) in dx
                        .values_mut()
                        .iter_mut()
                        .zip(dy.values())
                        .zip(x.values().iter().zip(value.values()))
                    {
                        *d = if xv > T::zero() { g } else { g * (yv + T::one()) };
                    }
                    updates.push((parents[0], dx));
                }
            }
            OpKind::Dense => {
                let (x, w) = (parent_value(parents[0]), parent_value(parents[1]));
                let (xs, ws) = (x.shape(), w.shape());
                let (b, n, m) = (xs.batch, xs.maps, ws.batch);
                if parent_requires[0] {
                    let mut dx = Tensor4::zeros(xs);
                    gemm_nn(dy.values(), w.values(), dx.values_mut(), b, m, n, Execution::Sequential);
                    updates.push((parents[0], dx));
                }
                if parent_requires[1] {
                    let dy_t = transpose(dy.values(), b, m);
                    let mut dw = Tensor4::zeros(ws);
                    gemm_nn(&dy_t, x.values(), dw.values_mut(), m, b, n, Execution::Sequential);
                    updates.push((parents[1], dw));
                }
                if parent_requires[2] {
                    let mut db = Tensor4::zeros(Shape4::new(1, m, 1, 1));
                    for bi in 0..b {
                        for j in 0..m {
                            db.values_mut()[j] += dy.values()[bi * m + j];
                        }
                    }
                    updates.push((parents[2], db));
                }
            }
            OpKind::SoftmaxT { tau } => {
                if parent_requires[0] {
                    let p = &value;
                    let c = p.shape().maps;
                    let mut dx = Tensor4::zeros(p.shape());
                    for bi in 0..p.shape().batch {
                        let row = &p.values()[bi * c..(bi + 1) * c];
                        let grow = &dy.values()[bi * c..(bi + 1) * c];
                        let mut dot = T::zero();
                        for (&pv, &gv) in row.iter().zip(grow) {
                            dot += pv * gv;
                        }
                        for j in 0..c {
                            dx.values_mut()[bi * c + j] = row[j] * (grow[j] - dot) / tau;
                        }
                    }
                    updates.push((parents[0], dx));
                }
            }
            OpKind::LogSoftmaxT { tau } => {
                if parent_requires[0] {
                    let c = value.shape().maps;
                    let mut dx = Tensor4::zeros(value.shape());
                    for bi in 0..value.shape().batch {
                        let logp = &value.values()[bi * c..(bi + 1) * c];
                        let grow = &dy.values()[bi * c..(bi + 1) * c];
                        let mut gsum = T::zero();
                        for &gv in grow {
                            gsum += gv;
                        }
                        for j in 0..c {
                            dx.values_mut()[bi * c + j] = (grow[j] - logp[j].exp() * gsum) / tau;
                        }
                    }
                    updates.push((parents[0], dx));
                }
            }
            OpKind::Pick { indices } => {
                if parent_requires[0] {
                    let xs = parent_value(parents[0]).shape();
                    let mut dx = Tensor4::zeros(xs);
                    for (bi, &cls) in indices.iter().enumerate() {
                        dx.values_mut()[bi * xs.maps + cls] += dy.values()[bi];
                    }
                    updates.push((parents[0], dx));
                }
            }
            OpKind::LnFloored => {
                if parent_requires[0] {
                    let x = parent_value(parents[0]);
                    let floor = T::of_f64(PROB_FLOOR);
                    let mut dx = Tensor4::zeros(x.shape());
                    for ((d, &g), &xv) in dx.values_mut().iter_mut().zip(dy.values()).zip(x.values()) {
                        *d = if xv > floor { g / xv } else { T::zero() };
                    }
                    updates.push((parents[0], dx));
                }
            }
            OpKind::Add => {
                if parent_requires[0] {
                    updates.push((parents[0], dy.clone()));
                }
                if parent_requires[1] {
                    updates.push((parents[1], dy));
                }
            }
            OpKind::Mul => {
                if parent_requires[0] {
                    let b = parent_value(parents[1]);
                    let mut da = dy.clone();
                    for (g, &bv) in da.values_mut().iter_mut().zip(b.values()) {
                        *g *= bv;
                    }
                    updates.push((parents[0], da));
                }
                if parent_requires[1] {
                    let a = parent_value(parents[0]);
                    let mut db = dy;
                    for (g, &av) in db.values_mut().iter_mut().zip(a.values()) {
                        *g *= av;
                    }
                    updates.push((parents[1], db));
                }
            }
            OpKind::Scale { c } => {
                if parent_requires[0] {
                    let mut dx = dy;
                    dx.scale_in_place(c);
                    updates.push((parents[0], dx));
                }
            }
            OpKind::SumAll => {
                if parent_requires[0] {
                    let xs = parent_value(parents[0]).shape();
                    updates.push((parents[0], Tensor4::filled(xs, dy.item())));
                }
            }
            OpKind::SumMaps => {
                if parent_requires[0] {
                    let xs = parent_value(parents[0]).shape();
                    let mut dx = Tensor4::zeros(xs);
                    for b in 0..xs.batch {
                        let g = dy.values()[b];
                        for v in &mut dx.values_mut()[b * xs.maps..(b + 1) * xs.maps] {
                            *v = g;
                        }
                    }
                    updates.push((parents[0], dx));
                }
            }
        }
        updates
    }
}

fn elu_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

fn rowwise_softmax<T: Scalar>(x: &Tensor4<T>, tau: T, log: bool) -> Result<Tensor4<T>, TensorError> {
    if tau <= T::zero() {
        return Err(TensorError::NonPositiveTemperature(tau.into_f64()));
    }
    let xs = x.shape();
    if xs.height != 1 || xs.width != 1 || xs.maps == 0 {
        return Err(TensorError::InvalidShape {
            op: "softmax",
            shape: xs,
            reason: "expects (batch, classes, 1, 1)".into(),
        });
    }
    let c = xs.maps;
    let mut out = Tensor4::zeros(xs);
    for b in 0..xs.batch {
        let row = &x.values()[b * c..(b + 1) * c];
        let dst = &mut out.values_mut()[b * c..(b + 1) * c];
        softmax_row(row, tau, log, dst);
    }
    Ok(out)
}

/// Max-subtracted tempered softmax of one row; optionally its logarithm.
fn softmax_row<T: Scalar>(row: &[T], tau: T, log: bool, dst: &mut [T]) {
    let mut max = row[0];
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for (d, &v) in dst.iter_mut().zip(row) {
        let e = ((v - max) / tau).exp();
        *d = e;
        sum += e;
    }
    if log {
        let lse = sum.ln();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max) / tau - lse;
        }
    } else {
        let inv = T::one() / sum;
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
}

/// Tempered softmax of a plain logit vector,
/// `pᵢ = exp(zᵢ/τ) / Σⱼ exp(zⱼ/τ)`, computed with max subtraction.
pub fn tempered_softmax<T: Scalar>(logits: &[T], tau: T) -> Result<Vec<T>, TensorError> {
    if tau <= T::zero() {
        return Err(TensorError::NonPositiveTemperature(tau.into_f64()));
    }
    assert!(!logits.is_empty());
    let mut out = vec![T::zero(); logits.len()];
    softmax_row(logits, tau, false, &mut out);
    Ok(out)
}
