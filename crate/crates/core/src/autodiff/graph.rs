//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every op is evaluated eagerly when it is pushed and recorded together
//! with its inputs, so the same graph can be re-evaluated after leaf
//! values change (used by [`grad_check`]) and differentiated with
//! [`Graph::backward`]. Nodes are stored in push order, which is a
//! topological order by construction.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tensor::{
    gelu, gelu_grad, layer_norm_row, log_softmax_row, matmul, matmul_nt, matmul_tn, softmax_row,
    transpose, Tensor,
};

/// Fill value for masked attention scores. Finite, and `exp` of it underflows to zero.
pub const MASKED_SCORE: f64 = -1e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node} ({op}): shape mismatch, {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward needs a single-element output, node {node} has shape {shape:?}")]
    NonScalarOutput { node: usize, shape: Vec<usize> },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("node {node} is not a leaf")]
    NotLeaf { node: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(String),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Gelu(NodeId),
    Embedding { table: NodeId, ids: Vec<usize> },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    CausalMask(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Gather { x: NodeId, index: Vec<usize> },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, weights: Vec<f64> },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Minimum(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Gelu(_) => "gelu",
            Op::Embedding { .. } => "embedding",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::CausalMask(_) => "causal_mask",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Clamp { .. } => "clamp",
            Op::Minimum(..) => "minimum",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Param(_))
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `id`; zeros when the output does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        let shape = &self.shapes[id.0];
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
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

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Input, value)
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.push_raw(Op::Param(name.to_string()), value)
    }

    /// Parameter leaves in push order, keyed by name.
    pub fn params(&self) -> BTreeMap<String, NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Param(name) => Some((name.clone(), NodeId(i))),
                _ => None,
            })
            .collect()
    }

    fn push_raw(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId, GraphError> {
        let node = self.nodes.len();
        let value = self.compute(&op, node)?;
        if !value.is_finite() {
            return Err(GraphError::NonFinite { node, op: op.name() });
        }
        Ok(self.push_raw(op, value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Transpose(a))
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Mul(a, b))
    }
    /// Adds a row vector `b[n]` to every row of `a[m,n]`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::AddRow(a, b))
    }
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        self.push(Op::Scale(a, factor))
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Exp(a))
    }
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Gelu(a))
    }
    /// Row lookup `table[ids[i]]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, GraphError> {
        self.push(Op::Embedding {
            table,
            ids: ids.to_vec(),
        })
    }
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, GraphError> {
        self.push(Op::SliceCols { x, start, len })
    }
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        self.push(Op::ConcatCols(parts.to_vec()))
    }
    /// Replaces entries above the diagonal of a square score matrix with [`MASKED_SCORE`].
    pub fn causal_mask(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::CausalMask(x))
    }
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Softmax(x))
    }
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::LogSoftmax(x))
    }
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::LayerNorm { x, gamma, beta })
    }
    /// Picks `x[i, index[i]]` from every row.
    pub fn gather(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId, GraphError> {
        self.push(Op::Gather {
            x,
            index: index.to_vec(),
        })
    }
    /// `Σ_i w_i · (−log_softmax(logits_i)[target_i])`; rows with zero weight are ignored.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<NodeId, GraphError> {
        self.push(Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
        })
    }
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId, GraphError> {
        self.push(Op::Clamp { x, lo, hi })
    }
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Minimum(a, b))
    }
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Sum(x))
    }
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Mean(x))
    }

    /// Replaces leaf values and recomputes every derived node.
    pub fn evaluate(&mut self, inputs: &[(NodeId, Tensor)]) -> Result<(), GraphError> {
        for (id, value) in inputs {
            let node = &mut self.nodes[id.0];
            if !node.op.is_leaf() {
                return Err(GraphError::NotLeaf { node: id.0 });
            }
            if node.value.shape() != value.shape() {
                return Err(GraphError::Shape {
                    node: id.0,
                    op: node.op.name(),
                    detail: format!("expected {:?}, got {:?}", node.value.shape(), value.shape()),
                });
            }
            node.value = value.clone();
        }
        self.recompute()
    }

    fn recompute(&mut self) -> Result<(), GraphError> {
        for i in 0..self.nodes.len() {
            if self.nodes[i].op.is_leaf() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.compute(&op, i)?;
            if !value.is_finite() {
                return Err(GraphError::NonFinite { node: i, op: op.name() });
            }
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn compute(&self, op: &Op, node: usize) -> Result<Tensor, GraphError> {
        let name = op.name();
        let shape_err = |detail: String| GraphError::Shape {
            node,
            op: name,
            detail,
        };
        let v = |id: &NodeId| &self.nodes[id.0].value;
        let mat = |t: &Tensor| -> Result<(usize, usize), GraphError> {
            if t.shape().len() != 2 {
                return Err(shape_err(format!("expected a matrix, got {:?}", t.shape())));
            }
            Ok((t.shape()[0], t.shape()[1]))
        };
        let out = match op {
            Op::Input | Op::Param(_) => unreachable!("leaves are never recomputed"),
            Op::MatMul(a, b) => {
                let (m, k) = mat(v(a))?;
                let (k2, n) = mat(v(b))?;
                if k != k2 {
                    return Err(shape_err(format!("{m}x{k} times {k2}x{n}")));
                }
                Tensor::new(vec![m, n], matmul(v(a).data(), v(b).data(), m, k, n))
            }
            Op::Transpose(a) => {
                let (m, n) = mat(v(a))?;
                Tensor::new(vec![n, m], transpose(v(a).data(), m, n))
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Minimum(a, b) => {
                let (x, y) = (v(a), v(b));
                if x.shape() != y.shape() {
                    return Err(shape_err(format!("{:?} vs {:?}", x.shape(), y.shape())));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |p, q| p + q,
                    Op::Sub(..) => |p, q| p - q,
                    Op::Mul(..) => |p, q| p * q,
                    _ => f64::min,
                };
                let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Op::AddRow(a, b) => {
                let x = v(a);
                let bias = v(b);
                if bias.len() != x.cols() {
                    return Err(shape_err(format!("row of {} vs {:?}", bias.len(), x.shape())));
                }
                let c = x.cols();
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| p + bias.data()[i % c])
                    .collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Op::Scale(a, f) => {
                let x = v(a);
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|p| p * f).collect())
            }
            Op::Exp(a) => {
                let x = v(a);
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|p| p.exp()).collect())
            }
            Op::Gelu(a) => {
                let x = v(a);
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| gelu(p)).collect())
            }
            Op::Embedding { table, ids } => {
                let (rows, d) = mat(v(table))?;
                let mut data = Vec::with_capacity(ids.len() * d);
                for &id in ids {
                    if id >= rows {
                        return Err(shape_err(format!("id {id} out of range for {rows} rows")));
                    }
                    data.extend_from_slice(v(table).row(id));
                }
                Tensor::new(vec![ids.len(), d], data)
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = mat(v(x))?;
                if start + len > n {
                    return Err(shape_err(format!("cols {start}..{} of {n}", start + len)));
                }
                let mut data = Vec::with_capacity(m * len);
                for i in 0..m {
                    data.extend_from_slice(&v(x).row(i)[*start..start + len]);
                }
                Tensor::new(vec![m, *len], data)
            }
            Op::ConcatCols(parts) => {
                let m = parts.first().map(|p| v(p).rows()).unwrap_or(0);
                let mut total = 0;
                for p in parts {
                    let (pm, pn) = mat(v(p))?;
                    if pm != m {
                        return Err(shape_err(format!("row counts {pm} vs {m}")));
                    }
                    total += pn;
                }
                let mut data = Vec::with_capacity(m * total);
                for i in 0..m {
                    for p in parts {
                        data.extend_from_slice(v(p).row(i));
                    }
                }
                Tensor::new(vec![m, total], data)
            }
            Op::CausalMask(x) => {
                let (m, n) = mat(v(x))?;
                if m != n {
                    return Err(shape_err(format!("causal mask needs a square matrix, got {m}x{n}")));
                }
                let mut data = v(x).data().to_vec();
                for i in 0..m {
                    for j in i + 1..n {
                        data[i * n + j] = MASKED_SCORE;
                    }
                }
                Tensor::new(vec![m, n], data)
            }
            Op::Softmax(x) | Op::LogSoftmax(x) => {
                let t = v(x);
                let c = t.cols();
                let mut data = vec![0.0; t.len()];
                for i in 0..t.rows() {
                    let out = &mut data[i * c..(i + 1) * c];
                    if matches!(op, Op::Softmax(_)) {
                        softmax_row(t.row(i), out);
                    } else {
                        log_softmax_row(t.row(i), out);
                    }
                }
                Tensor::new(t.shape().to_vec(), data)
            }
            Op::LayerNorm { x, gamma, beta } => {
                let t = v(x);
                let c = t.cols();
                if v(gamma).len() != c || v(beta).len() != c {
                    return Err(shape_err(format!("gain/bias length vs {c} columns")));
                }
                let mut data = vec![0.0; t.len()];
                for i in 0..t.rows() {
                    layer_norm_row(t.row(i), v(gamma).data(), v(beta).data(), &mut data[i * c..(i + 1) * c]);
                }
                Tensor::new(t.shape().to_vec(), data)
            }
            Op::Gather { x, index } => {
                let t = v(x);
                if index.len() != t.rows() {
                    return Err(shape_err(format!("{} indices for {} rows", index.len(), t.rows())));
                }
                let mut data = Vec::with_capacity(index.len());
                for (i, &j) in index.iter().enumerate() {
                    if j >= t.cols() {
                        return Err(shape_err(format!("index {j} out of {} columns", t.cols())));
                    }
                    data.push(t.at(i, j));
                }
                Tensor::new(vec![index.len()], data)
            }
            Op::CrossEntropy { logits, targets, weights } => {
                let t = v(logits);
                if targets.len() != t.rows() || weights.len() != t.rows() {
                    return Err(shape_err(format!(
                        "{} targets / {} weights for {} rows",
                        targets.len(),
                        weights.len(),
                        t.rows()
                    )));
                }
                let mut lp = vec![0.0; t.cols()];
                let mut total = 0.0;
                for (i, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    if y >= t.cols() {
                        return Err(shape_err(format!("target {y} out of {} classes", t.cols())));
                    }
                    log_softmax_row(t.row(i), &mut lp);
                    total -= w * lp[y];
                }
                Ok(Tensor::scalar(total))
            }
            Op::Clamp { x, lo, hi } => {
                let t = v(x);
                Tensor::new(t.shape().to_vec(), t.data().iter().map(|p| p.clamp(*lo, *hi)).collect())
            }
            Op::Sum(x) => Ok(Tensor::scalar(v(x).data().iter().sum())),
            Op::Mean(x) => {
                let t = v(x);
                if t.is_empty() {
                    return Err(shape_err("mean of an empty tensor".into()));
                }
                Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64))
            }
        };
        out.map_err(|e| shape_err(e.to_string()))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, GraphError> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(GraphError::NonScalarOutput {
                node: output.0,
                shape: out_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Gradients of `output` keyed by parameter name.
    pub fn param_grads(&self, output: NodeId) -> Result<BTreeMap<String, Tensor>, GraphError> {
        let grads = self.backward(output)?;
        Ok(self
            .params()
            .into_iter()
            .map(|(name, id)| (name, grads.wrt(id)))
            .collect())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |id: &NodeId| &self.nodes[id.0].value;
        let mut acc = |id: NodeId, delta: Vec<f64>| match &mut grads[id.0] {
            Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                acc(*a, matmul_nt(g, val(b).data(), m, n, k));
                acc(*b, matmul_tn(val(a).data(), g, m, k, n));
            }
            Op::Transpose(a) => {
                let (m, n) = (val(a).shape()[0], val(a).shape()[1]);
                acc(*a, transpose(g, n, m));
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(a).data(), val(b).data());
                acc(*a, g.iter().zip(y).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(x).map(|(g, x)| g * x).collect());
            }
            Op::Minimum(a, b) => {
                let (x, y) = (val(a).data(), val(b).data());
                // ties route the gradient to the first argument
                acc(*a, g.iter().zip(x.iter().zip(y)).map(|(g, (x, y))| if x <= y { *g } else { 0.0 }).collect());
                acc(*b, g.iter().zip(x.iter().zip(y)).map(|(g, (x, y))| if x <= y { 0.0 } else { *g }).collect());
            }
            Op::AddRow(a, b) => {
                let c = val(b).len();
                let mut gb = vec![0.0; c];
                for (j, gv) in g.iter().enumerate() {
                    gb[j % c] += gv;
                }
                acc(*a, g.to_vec());
                acc(*b, gb);
            }
            Op::Scale(a, f) => acc(*a, g.iter().map(|x| x * f).collect()),
            Op::Exp(a) => acc(*a, g.iter().zip(node.value.data()).map(|(g, y)| g * y).collect()),
            Op::Gelu(a) => acc(*a, g.iter().zip(val(a).data()).map(|(g, &x)| g * gelu_grad(x)).collect()),
            Op::Embedding { table, ids } => {
                let d = val(table).cols();
                let mut gt = vec![0.0; val(table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        gt[id * d + c] += g[r * d + c];
                    }
                }
                acc(*table, gt);
            }
            Op::SliceCols { x, start, len } => {
                let n = val(x).cols();
                let mut gx = vec![0.0; val(x).len()];
                for r in 0..val(x).rows() {
                    gx[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                acc(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let pn = val(p).cols();
                    let mut gp = Vec::with_capacity(val(p).len());
                    for r in 0..val(p).rows() {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + pn]);
                    }
                    offset += pn;
                    acc(*p, gp);
                }
            }
            Op::CausalMask(x) => {
                let n = val(x).cols();
                let mut gx = g.to_vec();
                for r in 0..n {
                    for c in r + 1..n {
                        gx[r * n + c] = 0.0;
                    }
                }
                acc(*x, gx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..c {
                        gx[r * c + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                acc(*x, gx);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xt = val(x);
                let c = xt.cols();
                let gam = val(gamma).data();
                let mut gx = vec![0.0; xt.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut scratch = vec![0.0; c];
                let ones = vec![1.0; c];
                let zeros = vec![0.0; c];
                for r in 0..xt.rows() {
                    // xhat is the normalized row before the affine transform
                    let (_, inv_std) = layer_norm_row(xt.row(r), &ones, &zeros, &mut scratch);
                    let gr = &g[r * c..(r + 1) * c];
                    let mut mean_gh = 0.0;
                    let mut mean_gh_xhat = 0.0;
                    for j in 0..c {
                        let gh = gr[j] * gam[j];
                        mean_gh += gh;
                        mean_gh_xhat += gh * scratch[j];
                        gg[j] += gr[j] * scratch[j];
                        gb[j] += gr[j];
                    }
                    mean_gh /= c as f64;
                    mean_gh_xhat /= c as f64;
                    for j in 0..c {
                        let gh = gr[j] * gam[j];
                        gx[r * c + j] = inv_std * (gh - mean_gh - scratch[j] * mean_gh_xhat);
                    }
                }
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::Gather { x, index } => {
                let c = val(x).cols();
                let mut gx = vec![0.0; val(x).len()];
                for (r, &j) in index.iter().enumerate() {
                    gx[r * c + j] += g[r];
                }
                acc(*x, gx);
            }
            Op::CrossEntropy { logits, targets, weights } => {
                let t = val(logits);
                let c = t.cols();
                let mut gx = vec![0.0; t.len()];
                let mut p = vec![0.0; c];
                for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    softmax_row(t.row(r), &mut p);
                    for j in 0..c {
                        gx[r * c + j] = g[0] * w * p[j];
                    }
                    gx[r * c + y] -= g[0] * w;
                }
                acc(*logits, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let xs = val(x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xs)
                        .map(|(g, &v)| if v < *lo || v > *hi { 0.0 } else { *g })
                        .collect(),
                );
            }
            Op::Sum(x) => acc(*x, vec![g[0]; val(x).len()]),
            Op::Mean(x) => {
                let n = val(x).len();
                acc(*x, vec![g[0] / n as f64; n]);
            }
        }
    }
}

/// Compares [`Graph::backward`] against central differences on parameter
/// coordinates and returns the largest relative error.
///
/// When the parameters hold more than `max_coords` values, a seeded random
/// subsample of `max_coords` coordinates is checked. The relative error of a
/// coordinate is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`
/// with `floor = 1e-6`, so vanishing gradients are compared absolutely.
pub fn grad_check(
    graph: &mut Graph,
    output: NodeId,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64, GraphError> {
    if h.is_nan() || h <= 0.0 {
        return Err(GraphError::BadStep(h));
    }
    let grads = graph.backward(output)?;
    let params: Vec<NodeId> = graph.params().into_values().collect();
    let mut coords: Vec<(NodeId, usize)> = params
        .iter()
        .flat_map(|&id| (0..graph.value(id).len()).map(move |j| (id, j)))
        .collect();
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), max_coords).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }
    let mut worst: f64 = 0.0;
    for (id, j) in coords {
        let analytic = grads.wrt(id).data()[j];
        let base = graph.value(id).clone();
        let mut plus = base.clone();
        plus.data_mut()[j] += h;
        graph.evaluate(&[(id, plus)])?;
        let f_plus = graph.value(output).data()[0];
        let mut minus = base.clone();
        minus.data_mut()[j] -= h;
        graph.evaluate(&[(id, minus)])?;
        let f_minus = graph.value(output).data()[0];
        graph.evaluate(&[(id, base)])?;
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn matmul_forward() {
        let mut g = Graph::new();
        let a = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.input(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn shape_error_names_node() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(GraphError::Shape { node, op, .. }) => assert_eq!((node, op), (2, "matmul")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut g = Graph::new();
        let a = g.input(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(a), Err(GraphError::NonFinite { .. })));
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::zeros(&[2]));
        assert!(matches!(g.backward(a), Err(GraphError::NonScalarOutput { .. })));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_one_hot() {
        let mut g = Graph::new();
        let z = vec![0.3, -1.2, 2.0, 0.5];
        let logits = g.param("z", Tensor::new(vec![1, 4], z.clone()).unwrap());
        let loss = g.cross_entropy(logits, &[2], &[1.0]).unwrap();
        let grad = g.backward(loss).unwrap().wrt(logits);
        let p = crate::autodiff::tensor::softmax(&z);
        for (j, pj) in p.iter().enumerate() {
            let expected = pj - if j == 2 { 1.0 } else { 0.0 };
            assert!((grad.data()[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_cross_entropy_vanishes() {
        let mut g = Graph::new();
        let logits = g.input(Tensor::new(vec![1, 3], vec![0.0, 60.0, 0.0]).unwrap());
        let loss = g.cross_entropy(logits, &[1], &[1.0]).unwrap();
        assert!(g.value(loss).data()[0] < 1e-20);
    }

    #[test]
    fn linear_model_grad_check_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.input(random_tensor(&mut rng, &[4, 3]));
        let w = g.param("w", random_tensor(&mut rng, &[3, 2]));
        let b = g.param("b", random_tensor(&mut rng, &[2]));
        let y = g.matmul(x, w).unwrap();
        let y = g.add_row(y, b).unwrap();
        let s = g.sum(y).unwrap();
        let err = grad_check(&mut g, s, 1e-5, 1000, 0).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn zero_step_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(1.0));
        let y = g.mul(x, x).unwrap();
        assert_eq!(grad_check(&mut g, y, 0.0, 10, 0), Err(GraphError::BadStep(0.0)));
    }

    /// Every op in one graph, checked against central differences.
    #[test]
    fn all_ops_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let emb = g.param("emb", random_tensor(&mut rng, &[5, 4]));
        let w = g.param("w", random_tensor(&mut rng, &[4, 4]));
        let gamma = g.param("gamma", random_tensor(&mut rng, &[4]));
        let beta = g.param("beta", random_tensor(&mut rng, &[4]));
        let x = g.embedding(emb, &[0, 3, 3, 1]).unwrap();
        let h = g.layer_norm(x, gamma, beta).unwrap();
        let h = g.matmul(h, w).unwrap();
        let h = g.gelu(h).unwrap();
        let left = g.slice_cols(h, 0, 2).unwrap();
        let right = g.slice_cols(h, 2, 2).unwrap();
        let rt = g.transpose(right).unwrap();
        let scores = g.matmul(left, rt).unwrap();
        let scores = g.scale(scores, 0.5).unwrap();
        let scores = g.causal_mask(scores).unwrap();
        let att = g.softmax(scores).unwrap();
        let mixed = g.matmul(att, h).unwrap();
        let both = g.concat_cols(&[mixed, left]).unwrap();
        let prod = g.mul(both, both).unwrap();
        let diff = g.sub(prod, both).unwrap();
        let lsm = g.log_softmax(diff).unwrap();
        let picked = g.gather(lsm, &[0, 1, 5, 2]).unwrap();
        let e = g.exp(picked).unwrap();
        let c = g.clamp(e, 0.05, 0.2).unwrap();
        let m = g.minimum(e, c).unwrap();
        let ce = g.cross_entropy(diff, &[1, 0, 3, 2], &[1.0, 0.0, 0.5, 2.0]).unwrap();
        let mm = g.mean(m).unwrap();
        let total = g.add(ce, mm).unwrap();
        let err = grad_check(&mut g, total, 1e-5, 10_000, 0).unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn backward_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (a, b): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mut g = Graph::new();
            let w = g.param("w", random_tensor(&mut rng, &[3, 3]));
            let x = g.input(random_tensor(&mut rng, &[2, 3]));
            let y = g.matmul(x, w).unwrap();
            let f = g.gelu(y).unwrap();
            let f = g.sum(f).unwrap();
            let sq = g.mul(y, y).unwrap();
            let gg = g.mean(sq).unwrap();
            let fa = g.scale(f, a).unwrap();
            let gb = g.scale(gg, b).unwrap();
            let combo = g.add(fa, gb).unwrap();
            let gf = g.backward(f).unwrap().wrt(w);
            let ggr = g.backward(gg).unwrap().wrt(w);
            let gc = g.backward(combo).unwrap().wrt(w);
            for j in 0..9 {
                let expected = a * gf.data()[j] + b * ggr.data()[j];
                assert!((gc.data()[j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_recomputes_from_new_leaves() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        g.evaluate(&[(x, Tensor::scalar(5.0))]).unwrap();
        assert_eq!(g.value(y).data(), &[25.0]);
        assert!(matches!(g.evaluate(&[(y, Tensor::scalar(1.0))]), Err(GraphError::NotLeaf { .. })));
    }
}
