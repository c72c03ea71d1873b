//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is define-by-run: every operation is evaluated the moment it is
//! recorded, so node order on the tape is already topological. Binding inputs
//! happens through [`Graph::constant`] and [`Graph::variable`]; the latter marks
//! leaves whose gradients [`Graph::backward`] reports.

mod kernels;
mod params;

pub use params::{BoundParams, ParamStore};

use kernels::ConvGeom;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MeanTrailing(NodeId),
    Reshape(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    ChannelBias {
        x: NodeId,
        b: NodeId,
    },
    Concat(Vec<NodeId>),
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    AvgPool {
        x: NodeId,
        nc: usize,
        dims: [usize; 3],
        k: [usize; 3],
    },
    L2Norm(NodeId),
    ChannelUnitNorm {
        x: NodeId,
        eps: f64,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddScalar(a)
            | Relu(a)
            | Tanh(a)
            | Abs(a)
            | Square(a)
            | Sum(a)
            | Mean(a)
            | MeanTrailing(a)
            | Reshape(a)
            | L2Norm(a) => vec![*a],
            Linear { x, w, b } | Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            ChannelBias { x, b } => vec![*x, *b],
            Concat(parts) => parts.clone(),
            AvgPool { x, .. } | ChannelUnitNorm { x, .. } => vec![*x],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape with eagerly evaluated node values.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that requires them.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, or zeros of the node's shape when no path reaches it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            op,
            node: self.nodes.len(),
            detail,
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err(
                name,
                format!("operands have shapes {:?} and {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.record(out, op))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out = self.value(a).map(f);
        self.record(out, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Absolute value; the gradient at exactly zero is taken as zero.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.record(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let m = v.sum() / v.len().max(1) as f64;
        self.record(Tensor::scalar(m), Op::Mean(a))
    }

    /// Averages away every axis from `keep` onwards: `[d0..dk, ...] -> [d0..dk]`.
    pub fn mean_trailing(&mut self, a: NodeId, keep: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if keep > shape.len() {
            return Err(self.shape_err(
                "mean_trailing",
                format!("cannot keep {keep} axes of a rank-{} tensor", shape.len()),
            ));
        }
        let outer = numel(&shape[..keep]);
        let inner = numel(&shape[keep..]);
        let v = self.value(a).data();
        let data = (0..outer)
            .map(|o| v[o * inner..(o + 1) * inner].iter().sum::<f64>() / inner.max(1) as f64)
            .collect();
        let out = Tensor::new(shape[..keep].to_vec(), data)?;
        Ok(self.record(out, Op::MeanTrailing(a)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let shape = shape.into();
        let v = self.value(a);
        if numel(&shape) != v.len() {
            return Err(self.shape_err(
                "reshape",
                format!("cannot reshape {:?} into {:?}", v.shape(), shape),
            ));
        }
        let out = v.clone().reshape(shape)?;
        Ok(self.record(out, Op::Reshape(a)))
    }

    /// `x [N, I] · wᵀ [I, O] + b [O]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(self.shape_err(
                "linear",
                format!("input {xs:?} is incompatible with weight {ws:?}"),
            ));
        }
        let (n, i_dim, o_dim) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [o_dim] {
                return Err(self.shape_err(
                    "linear",
                    format!("bias {:?} does not match {o_dim} outputs", self.shape(b)),
                ));
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * o_dim];
        for r in 0..n {
            let row = &xv[r * i_dim..(r + 1) * i_dim];
            for o in 0..o_dim {
                let wr = &wv[o * i_dim..(o + 1) * i_dim];
                let dot: f64 = row.iter().zip(wr).map(|(a, b)| a * b).sum();
                out[r * o_dim + o] = dot + bv.map_or(0.0, |b| b[o]);
            }
        }
        let out = Tensor::new([n, o_dim], out)?;
        Ok(self.record(out, Op::Linear { x, w, b }))
    }

    /// Adds `b [C]` to every element of channel `c` in `x [N, C, ...]`.
    pub fn channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(b) != [xs[1]] {
            return Err(self.shape_err(
                "channel_bias",
                format!("bias {:?} does not match input {xs:?}", self.shape(b)),
            ));
        }
        let c = xs[1];
        let rest = numel(&xs[2..]);
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (chunk_idx, chunk) in out.data_mut().chunks_mut(rest.max(1)).enumerate() {
            let bias = bv[chunk_idx % c];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        Ok(self.record(out, Op::ChannelBias { x, b }))
    }

    /// Concatenates `[N, C_i, rest...]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = match parts.first() {
            Some(&p) => self.shape(p).to_vec(),
            None => return Err(self.shape_err("concat_channels", "no inputs".into())),
        };
        if first.len() < 2 {
            return Err(self.shape_err("concat_channels", format!("rank of {first:?} < 2")));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(self.shape_err(
                    "concat_channels",
                    format!("{s:?} is incompatible with {first:?}"),
                ));
            }
            channels += s[1];
        }
        let n = first[0];
        let rest = numel(&first[2..]);
        let mut data = Vec::with_capacity(n * channels * rest);
        for b in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                let v = self.value(p).data();
                data.extend_from_slice(&v[b * c * rest..(b + 1) * c * rest]);
            }
        }
        let mut shape = first.clone();
        shape[1] = channels;
        let out = Tensor::new(shape, data)?;
        Ok(self.record(out, Op::Concat(parts.to_vec())))
    }

    fn conv(
        &mut self,
        name: &'static str,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    ) -> Result<NodeId> {
        if !geom.valid() {
            return Err(self.shape_err(
                name,
                format!(
                    "kernel {:?} larger than padded input {:?}",
                    geom.kernel, geom.input
                ),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return Err(self.shape_err(
                    name,
                    format!(
                        "bias {:?} does not match {} filters",
                        self.shape(b),
                        geom.cout
                    ),
                ));
            }
        }
        let out = kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let [od, oh, ow] = geom.output();
        let shape = if name == "conv2d" {
            vec![geom.n, geom.cout, oh, ow]
        } else {
            vec![geom.n, geom.cout, od, oh, ow]
        };
        let out = Tensor::new(shape, out)?;
        Ok(self.record(out, Op::Conv { x, w, b, geom }))
    }

    /// 2-D convolution: `x [N, Ci, H, W]`, `w [Co, Ci, kh, kw]`, stride 1, zero padding `pad`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        pad: [usize; 2],
    ) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(self.shape_err(
                "conv2d",
                format!("input {xs:?} is incompatible with weight {ws:?}"),
            ));
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            cout: ws[0],
            input: [1, xs[2], xs[3]],
            kernel: [1, ws[2], ws[3]],
            pad: [0, pad[0], pad[1]],
        };
        self.conv("conv2d", x, w, b, geom)
    }

    /// 3-D convolution: `x [N, Ci, D, H, W]`, `w [Co, Ci, kd, kh, kw]`, stride 1, zero padding `pad`.
    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] {
            return Err(self.shape_err(
                "conv3d",
                format!("input {xs:?} is incompatible with weight {ws:?}"),
            ));
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            cout: ws[0],
            input: [xs[2], xs[3], xs[4]],
            kernel: [ws[2], ws[3], ws[4]],
            pad,
        };
        self.conv("conv3d", x, w, b, geom)
    }

    fn avg_pool(
        &mut self,
        x: NodeId,
        nc: usize,
        dims: [usize; 3],
        k: [usize; 3],
        out_shape: Vec<usize>,
    ) -> Result<NodeId> {
        if k.contains(&0) || (0..3).any(|a| dims[a] < k[a]) {
            return Err(self.shape_err(
                "avg_pool",
                format!("window {k:?} does not fit input extents {dims:?}"),
            ));
        }
        let data = kernels::avg_pool_forward(self.value(x).data(), nc, dims, k);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.record(out, Op::AvgPool { x, nc, dims, k }))
    }

    /// Non-overlapping average pooling of `[N, C, H, W]`.
    pub fn avg_pool2d(&mut self, x: NodeId, k: [usize; 2]) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(self.shape_err("avg_pool2d", format!("expected rank 4, got {s:?}")));
        }
        let out = vec![s[0], s[1], s[2] / k[0].max(1), s[3] / k[1].max(1)];
        self.avg_pool(x, s[0] * s[1], [1, s[2], s[3]], [1, k[0], k[1]], out)
    }

    /// Non-overlapping average pooling of `[N, C, D, H, W]`.
    pub fn avg_pool3d(&mut self, x: NodeId, k: [usize; 3]) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 5 {
            return Err(self.shape_err("avg_pool3d", format!("expected rank 5, got {s:?}")));
        }
        let out = vec![
            s[0],
            s[1],
            s[2] / k[0].max(1),
            s[3] / k[1].max(1),
            s[4] / k[2].max(1),
        ];
        self.avg_pool(x, s[0] * s[1], [s[2], s[3], s[4]], k, out)
    }

    /// Euclidean norm of all elements; the gradient at the origin is taken as zero.
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let n = self
            .value(a)
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        self.record(Tensor::scalar(n), Op::L2Norm(a))
    }

    /// Scales each spatial position of `x [N, C, ...]` to unit length across channels:
    /// `x / sqrt(Σ_c x² + eps)`.
    pub fn channel_unit_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || eps <= 0.0 {
            return Err(self.shape_err(
                "channel_unit_norm",
                format!("needs rank >= 2 and eps > 0, got {s:?}, eps {eps}"),
            ));
        }
        let (n, c, rest) = (s[0], s[1], numel(&s[2..]));
        let v = self.value(x).data();
        let mut out = vec![0.0; v.len()];
        for b in 0..n {
            for p in 0..rest {
                let sq: f64 = (0..c).map(|ch| v[(b * c + ch) * rest + p].powi(2)).sum();
                let norm = (sq + eps).sqrt();
                for ch in 0..c {
                    let i = (b * c + ch) * rest + p;
                    out[i] = v[i] / norm;
                }
            }
        }
        let out = Tensor::new(s, out)?;
        Ok(self.record(out, Op::ChannelUnitNorm { x, eps }))
    }

    /// Mean softmax cross-entropy of `logits [N, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(self.shape_err(
                "cross_entropy",
                format!("logits {s:?} with {} targets", targets.len()),
            ));
        }
        let k = s[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(self.shape_err(
                "cross_entropy",
                format!("target class {t} out of range for {k} classes"),
            ));
        }
        let v = self.value(logits).data();
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let row = &v[r * k..(r + 1) * k];
                log_sum_exp(row) - row[t]
            })
            .sum();
        let out = Tensor::scalar(total / targets.len() as f64);
        Ok(self.record(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Gradients of the scalar `output` with seed 1.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        self.backward_with_seed(output, 1.0)
    }

    /// Gradients of `seed · output` for a one-element `output`.
    pub fn backward_with_seed(&self, output: NodeId, seed: f64) -> Result<Gradients> {
        let out_shape = self.shape(output).to_vec();
        if numel(&out_shape) != 1 {
            return Err(Error::Shape {
                op: "backward",
                node: output.0,
                detail: format!("output must be scalar, got shape {out_shape:?}"),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out_shape, seed));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn with_shape_of(&self, id: NodeId, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(id).to_vec(), data).expect("gradient shape matches node")
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let d = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, self.with_shape_of(*a, d));
                }
                if self.needs(*b) {
                    let d = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, self.with_shape_of(*b, d));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let d = gd.iter().zip(vb).map(|(g, y)| g / y).collect();
                    self.accumulate(grads, *a, self.with_shape_of(*a, d));
                }
                if self.needs(*b) {
                    let d = gd
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, self.with_shape_of(*b, d));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| c * v)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, self.with_shape_of(*a, gd.to_vec()));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.with_shape_of(*a, d));
            }
            Op::Tanh(a) => {
                let d = gd.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *a, self.with_shape_of(*a, d));
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -*g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, self.with_shape_of(*a, d));
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect();
                self.accumulate(grads, *a, self.with_shape_of(*a, d));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, self.with_shape_of(*a, vec![gd[0]; n]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let v = gd[0] / n.max(1) as f64;
                self.accumulate(grads, *a, self.with_shape_of(*a, vec![v; n]));
            }
            Op::MeanTrailing(a) => {
                let total = self.value(*a).len();
                let outer = gd.len();
                let inner = total / outer.max(1);
                let mut d = vec![0.0; total];
                for (o, &gv) in gd.iter().enumerate() {
                    let v = gv / inner.max(1) as f64;
                    d[o * inner..(o + 1) * inner]
                        .iter_mut()
                        .for_each(|x| *x = v);
                }
                self.accumulate(grads, *a, self.with_shape_of(*a, d));
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, i_dim) = (xs[0], xs[1]);
                let o_dim = self.shape(*w)[0];
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if self.needs(*x) {
                    let mut d = vec![0.0; n * i_dim];
                    for r in 0..n {
                        for o in 0..o_dim {
                            let gv = gd[r * o_dim + o];
                            let wr = &wv[o * i_dim..(o + 1) * i_dim];
                            for (dst, w) in d[r * i_dim..(r + 1) * i_dim].iter_mut().zip(wr) {
                                *dst += gv * w;
                            }
                        }
                    }
                    self.accumulate(grads, *x, self.with_shape_of(*x, d));
                }
                if self.needs(*w) {
                    let mut d = vec![0.0; o_dim * i_dim];
                    for r in 0..n {
                        let row = &xv[r * i_dim..(r + 1) * i_dim];
                        for o in 0..o_dim {
                            let gv = gd[r * o_dim + o];
                            for (dst, x) in d[o * i_dim..(o + 1) * i_dim].iter_mut().zip(row) {
                                *dst += gv * x;
                            }
                        }
                    }
                    self.accumulate(grads, *w, self.with_shape_of(*w, d));
                }
                if let Some(b) = b {
                    let d = kernels::channel_sums(gd, n, o_dim);
                    self.accumulate(grads, *b, self.with_shape_of(*b, d));
                }
            }
            Op::ChannelBias { x, b } => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*b) {
                    let s = self.shape(*x);
                    let d = kernels::channel_sums(gd, s[0], s[1]);
                    self.accumulate(grads, *b, self.with_shape_of(*b, d));
                }
            }
            Op::Concat(parts) => {
                let s = node.value.shape();
                let (n, total_c) = (s[0], s[1]);
                let rest = numel(&s[2..]);
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(n * c * rest);
                        for bi in 0..n {
                            let start = (bi * total_c + offset) * rest;
                            d.extend_from_slice(&gd[start..start + c * rest]);
                        }
                        self.accumulate(grads, p, self.with_shape_of(p, d));
                    }
                    offset += c;
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (gx, gw) = kernels::conv_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    self.needs(*x),
                    self.needs(*w),
                );
                if self.needs(*x) {
                    self.accumulate(grads, *x, self.with_shape_of(*x, gx));
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, self.with_shape_of(*w, gw));
                }
                if let Some(b) = b {
                    let d = kernels::channel_sums(gd, geom.n, geom.cout);
                    self.accumulate(grads, *b, self.with_shape_of(*b, d));
                }
            }
            Op::AvgPool { x, nc, dims, k } => {
                let d = kernels::avg_pool_backward(gd, *nc, *dims, *k);
                self.accumulate(grads, *x, self.with_shape_of(*x, d));
            }
            Op::L2Norm(a) => {
                let norm = y[0];
                let x = self.value(*a).data();
                let d = if norm > 0.0 {
                    x.iter().map(|v| gd[0] * v / norm).collect()
                } else {
                    vec![0.0; x.len()]
                };
                self.accumulate(grads, *a, self.with_shape_of(*a, d));
            }
            Op::ChannelUnitNorm { x, eps } => {
                let s = self.shape(*x);
                let (n, c, rest) = (s[0], s[1], numel(&s[2..]));
                let xv = self.value(*x).data();
                let mut d = vec![0.0; xv.len()];
                for bi in 0..n {
                    for p in 0..rest {
                        let at = |ch: usize| (bi * c + ch) * rest + p;
                        let sq: f64 = (0..c).map(|ch| xv[at(ch)].powi(2)).sum::<f64>() + eps;
                        let norm = sq.sqrt();
                        let dot: f64 = (0..c).map(|ch| gd[at(ch)] * xv[at(ch)]).sum();
                        for ch in 0..c {
                            let i = at(ch);
                            d[i] = gd[i] / norm - xv[i] * dot / (sq * norm);
                        }
                    }
                }
                self.accumulate(grads, *x, self.with_shape_of(*x, d));
            }
            Op::CrossEntropy { logits, targets } => {
                let k = self.shape(*logits)[1];
                let v = self.value(*logits).data();
                let scale = gd[0] / targets.len() as f64;
                let mut d = vec![0.0; v.len()];
                for (r, &t) in targets.iter().enumerate() {
                    let p = softmax(&v[r * k..(r + 1) * k]);
                    for c in 0..k {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        d[r * k + c] = scale * (p[c] - onehot);
                    }
                }
                self.accumulate(grads, *logits, self.with_shape_of(*logits, d));
            }
        }
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
