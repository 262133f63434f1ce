//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is applied; node indices are
//! assigned in creation order, which is therefore a topological order and
//! makes cycles unrepresentable. [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients into every node that was reached.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul, matmul_lhs_t, matmul_rhs_t, Tensor};
use crate::error::{shape_err, Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Parameter,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Mean(usize),
    Sum(usize),
    ConcatCols(usize, usize),
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize> },
    BceWithLogits { logits: usize, targets: Vec<f64> },
    GradReverse { input: usize, mu: f64 },
    StopGrad,
    GateRatio { input: usize, delta: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Operation tape plus per-node gradient slots.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
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

    fn resolve(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id {
            return Err(Error::Graph(format!(
                "node {} belongs to graph {}, not graph {}",
                id.index, id.graph, self.id
            )));
        }
        if id.index >= self.nodes.len() {
            return Err(Error::Graph(format!("node {} does not exist", id.index)));
        }
        Ok(id.index)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let index = self.nodes.len();
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        NodeId { graph: self.id, index }
    }

    fn val(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Leaf whose gradient is of interest.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Parameter, value)
    }

    pub fn is_parameter(&self, id: NodeId) -> Result<bool> {
        let i = self.resolve(id)?;
        Ok(matches!(self.nodes[i].op, Op::Parameter))
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        let i = self.resolve(id)?;
        Ok(self.val(i))
    }

    /// Accumulated gradient of `id`; zeros when backward never reached it.
    pub fn grad(&self, id: NodeId) -> Result<Tensor> {
        let i = self.resolve(id)?;
        Ok(match &self.grads[i] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.val(i).shape().to_vec()),
        })
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.resolve(a)?, self.resolve(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::matrix(n, m, matmul(ta.data(), tb.data(), n, k, m))?;
        Ok(self.push(Op::MatMul(ia, ib), out))
    }

    /// `a[n,m] + b` with `b` holding `m` values broadcast over rows.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.resolve(a)?, self.resolve(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let m = ta.cols();
        if ta.shape().len() != 2 || tb.len() != m {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddBias(ia, ib), out))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor)> {
        let (ia, ib) = (self.resolve(a)?, self.resolve(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if !ta.same_shape(tb) {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(ta.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib, out) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(ia, ib), out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib, out) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(ia, ib), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib, out) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(ia, ib), out))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let out = self.val(ia).map(|v| v * c);
        Ok(self.push(Op::Scale(ia, c), out))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let out = self.val(ia).map(f64::tanh);
        Ok(self.push(Op::Tanh(ia), out))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let out = self.val(ia).map(|v| v.max(0.0));
        Ok(self.push(Op::Relu(ia), out))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let out = self.val(ia).map(sigmoid);
        Ok(self.push(Op::Sigmoid(ia), out))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let out = self.val(ia).map(f64::ln);
        Ok(self.push(Op::Log(ia), out))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let t = self.val(ia);
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.push(Op::Mean(ia), out))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let out = Tensor::scalar(self.val(ia).data().iter().sum());
        Ok(self.push(Op::Sum(ia), out))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.resolve(a)?, self.resolve(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(shape_err("concat_cols", format!("{:?} | {:?}", ta.shape(), tb.shape())));
        }
        let (n, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let out = Tensor::matrix(n, ca + cb, data)?;
        Ok(self.push(Op::ConcatCols(ia, ib), out))
    }

    /// Per-row cross-entropy of softmax(logits) against class indices, shape `[n]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let il = self.resolve(logits)?;
        let t = self.val(il);
        if t.shape().len() != 2 || t.rows() != labels.len() {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("logits {:?} with {} labels", t.shape(), labels.len()),
            ));
        }
        let k = t.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Domain(format!("label {bad} out of range for {k} classes")));
        }
        let losses = (0..t.rows())
            .map(|i| {
                let row = t.row(i);
                log_sum_exp(row) - row[labels[i]]
            })
            .collect();
        let out = Tensor::vector(losses)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits: il,
                labels: labels.to_vec(),
            },
            out,
        ))
    }

    /// Per-row binary cross-entropy of sigmoid(logit) against targets in `[0, 1]`, shape `[n]`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let il = self.resolve(logits)?;
        let t = self.val(il);
        if t.len() != targets.len() || t.cols() != 1 {
            return Err(shape_err(
                "bce_with_logits",
                format!("logits {:?} with {} targets", t.shape(), targets.len()),
            ));
        }
        let losses = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| softplus(z) - y * z)
            .collect();
        let out = Tensor::vector(losses)?;
        Ok(self.push(
            Op::BceWithLogits {
                logits: il,
                targets: targets.to_vec(),
            },
            out,
        ))
    }

    /// Identity forward; backward maps upstream `g` to `-mu * g`.
    pub fn grad_reverse(&mut self, a: NodeId, mu: f64) -> Result<NodeId> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::Config(format!(
                "gradient reversal coefficient must be finite and >= 0, got {mu}"
            )));
        }
        let ia = self.resolve(a)?;
        let out = self.val(ia).clone();
        Ok(self.push(Op::GradReverse { input: ia, mu }, out))
    }

    /// Identity forward; backward transmits nothing.
    pub fn stop_grad(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.resolve(a)?;
        let out = self.val(ia).clone();
        Ok(self.push(Op::StopGrad, out))
    }

    /// `d ↦ c / (1 - c)` with `c = clamp(d, delta, 1 - delta)`.
    pub fn gate_ratio(&mut self, a: NodeId, delta: f64) -> Result<NodeId> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::Config(format!("gate clamp must lie in (0, 0.5), got {delta}")));
        }
        let ia = self.resolve(a)?;
        let out = self.val(ia).map(|d| clamped_odds(d, delta));
        Ok(self.push(Op::GateRatio { input: ia, delta }, out))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let il = self.resolve(loss)?;
        if !self.val(il).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                il,
                self.val(il).shape()
            )));
        }
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    /// Backpropagates an explicit upstream gradient `seed` from `node`.
    pub fn backward_with(&mut self, node: NodeId, seed: Tensor) -> Result<()> {
        let start = self.resolve(node)?;
        if !seed.same_shape(self.val(start)) {
            return Err(shape_err(
                "backward",
                format!(
                    "seed {:?} for node of shape {:?}",
                    seed.shape(),
                    self.val(start).shape()
                ),
            ));
        }
        self.accumulate(start, seed);
        for i in (0..=start).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, index: usize, g: Tensor) {
        match &mut self.grads[index] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) -> Result<()> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Constant | Op::Parameter | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let ga = Tensor::matrix(n, k, matmul_rhs_t(g.data(), tb.data(), n, k, m))?;
                let gb = Tensor::matrix(k, m, matmul_lhs_t(ta.data(), g.data(), n, k, m))?;
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::AddBias(a, b) => {
                let m = g.cols();
                let mut gb = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let gb = Tensor::new(self.val(b).shape().to_vec(), gb)?;
                self.accumulate(a, g.clone());
                self.accumulate(b, gb);
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, self.val(b), |gv, bv| gv * bv);
                let gb = zip_map(g, self.val(a), |gv, av| gv * av);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Scale(a, c) => self.accumulate(a, g.map(|v| v * c)),
            Op::Tanh(a) => {
                let ga = zip_map(g, &self.nodes[i].value, |gv, y| gv * (1.0 - y * y));
                self.accumulate(a, ga);
            }
            Op::Relu(a) => {
                let ga = zip_map(g, self.val(a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(g, &self.nodes[i].value, |gv, y| gv * y * (1.0 - y));
                self.accumulate(a, ga);
            }
            Op::Log(a) => {
                let ga = zip_map(g, self.val(a), |gv, x| gv / x);
                self.accumulate(a, ga);
            }
            Op::Mean(a) => {
                let ta = self.val(a);
                let v = g.data()[0] / ta.len() as f64;
                let ga = Tensor::full(ta.shape().to_vec(), v);
                self.accumulate(a, ga);
            }
            Op::Sum(a) => {
                let ga = Tensor::full(self.val(a).shape().to_vec(), g.data()[0]);
                self.accumulate(a, ga);
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.val(a).cols(), self.val(b).cols());
                let n = g.rows();
                let mut da = Vec::with_capacity(n * ca);
                let mut db = Vec::with_capacity(n * cb);
                for r in 0..n {
                    let row = g.row(r);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(a, Tensor::matrix(n, ca, da)?);
                self.accumulate(b, Tensor::matrix(n, cb, db)?);
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let t = self.val(logits);
                let k = t.cols();
                let mut out = Vec::with_capacity(t.len());
                for (r, &y) in labels.iter().enumerate() {
                    let row = t.row(r);
                    let lse = log_sum_exp(row);
                    let gr = g.data()[r];
                    for (j, &z) in row.iter().enumerate() {
                        let p = (z - lse).exp();
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        out.push(gr * (p - onehot));
                    }
                }
                let gl = Tensor::matrix(labels.len(), k, out)?;
                self.accumulate(logits, gl);
            }
            Op::BceWithLogits { logits, targets } => {
                let t = self.val(logits);
                let data = t
                    .data()
                    .iter()
                    .zip(&targets)
                    .zip(g.data())
                    .map(|((&z, &y), &gv)| gv * (sigmoid(z) - y))
                    .collect();
                let gl = Tensor::new(t.shape().to_vec(), data)?;
                self.accumulate(logits, gl);
            }
            Op::GradReverse { input, mu } => {
                self.accumulate(input, g.map(|v| -mu * v));
            }
            Op::GateRatio { input, delta } => {
                let ga = zip_map(g, self.val(input), |gv, d| {
                    if d > delta && d < 1.0 - delta {
                        gv / ((1.0 - d) * (1.0 - d))
                    } else {
                        0.0
                    }
                });
                self.accumulate(input, ga);
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Odds `c / (1 - c)` of a probability clamped into `[delta, 1 - delta]`.
pub fn clamped_odds(d: f64, delta: f64) -> f64 {
    let c = d.clamp(delta, 1.0 - delta);
    c / (1.0 - c)
}
