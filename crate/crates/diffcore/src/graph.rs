//! Define-then-run computation graphs.
//!
//! A [`Graph`] is an ordered list of primitive applications. Every builder
//! method checks operand shapes eagerly, so a graph that builds without error
//! can only fail at evaluation time on missing/mis-shaped bindings or
//! non-finite values.
//!
//! Tensors of rank >= 1 are treated as `[rows, last_dim]` by the row-wise
//! primitives (softmax, norms, distances, cross-entropy). There is no other
//! broadcasting.

use crate::error::{DiffError, Result};
use crate::tensor::{numel, row_count, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Input {
        name: String,
        differentiable: bool,
    },
    Param(String),
    Constant(Tensor),
    Affine {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    MatMulT {
        a: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    Reshape(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Scale(NodeId, f64),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    L2Norm(NodeId),
    NormalizeRows(NodeId),
    CosineSimilarity(NodeId, NodeId),
    SquaredDistance(NodeId, NodeId),
    CrossEntropy {
        target: NodeId,
        log_probs: NodeId,
    },
    SumRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    GatherRows {
        x: NodeId,
        indices: Vec<usize>,
    },
    PickColumns {
        x: NodeId,
        columns: Vec<usize>,
    },
    StopGradient(NodeId),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param(_) => "param",
            Op::Constant(_) => "constant",
            Op::Affine { .. } => "affine",
            Op::MatMulT { .. } => "matmul_t",
            Op::Conv2d { .. } => "conv2d",
            Op::Reshape(_) => "reshape",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Minimum(..) => "minimum",
            Op::Scale(..) => "scale",
            Op::Clamp { .. } => "clamp",
            Op::L2Norm(_) => "l2_norm",
            Op::NormalizeRows(_) => "normalize_rows",
            Op::CosineSimilarity(..) => "cosine_similarity",
            Op::SquaredDistance(..) => "squared_distance",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SumRows(_) => "sum_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::GatherRows { .. } => "gather_rows",
            Op::PickColumns { .. } => "pick_columns",
            Op::StopGradient(_) => "stop_gradient",
        }
    }

    pub(crate) fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Param(_) | Op::Constant(_) => vec![],
            Op::Affine { x, weight, bias }
            | Op::Conv2d {
                x, weight, bias, ..
            } => {
                vec![*x, *weight, *bias]
            }
            Op::MatMulT { a, b } => vec![*a, *b],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Minimum(a, b)
            | Op::CosineSimilarity(a, b)
            | Op::SquaredDistance(a, b) => vec![*a, *b],
            Op::CrossEntropy { target, log_probs } => vec![*target, *log_probs],
            Op::Reshape(x)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Exp(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Scale(x, _)
            | Op::L2Norm(x)
            | Op::NormalizeRows(x)
            | Op::SumRows(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::StopGradient(x) => vec![*x],
            Op::Clamp { x, .. } | Op::GatherRows { x, .. } | Op::PickColumns { x, .. } => vec![*x],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Vec<usize>,
    pub(crate) needs_grad: bool,
}

/// Computation graph in topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Names of every parameter leaf, in node order.
    pub fn param_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Param(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input { name, .. } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Whether a gradient can flow from `id` back to any trainable leaf.
    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Input { differentiable, .. } => *differentiable,
            Op::Constant(_) | Op::StopGradient(_) => false,
            other => other.operands().iter().any(|o| self.nodes[o.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            shape,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, detail: String) -> DiffError {
        DiffError::ShapeMismatch {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn check_id(&self, op: &'static str, id: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(id.0)
            .map(|n| n.shape.as_slice())
            .ok_or_else(|| self.mismatch(op, format!("operand {} does not exist", id.0)))
    }

    /// Non-differentiable input bound by name at evaluation time.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(
            Op::Input {
                name: name.to_string(),
                differentiable: false,
            },
            shape.to_vec(),
        )
    }

    /// Input whose gradient is reported by [`Graph::backward`].
    pub fn differentiable_input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(
            Op::Input {
                name: name.to_string(),
                differentiable: true,
            },
            shape.to_vec(),
        )
    }

    /// Trainable leaf bound from a [`crate::ParamSet`] at evaluation time.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(Op::Param(name.to_string()), shape.to_vec())
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    /// `x · weight + bias` applied to every row of `x`; `weight` is `[in, out]`.
    pub fn affine(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.check_id("affine", x)?.to_vec();
        let ws = self.check_id("affine", weight)?.to_vec();
        let bs = self.check_id("affine", bias)?.to_vec();
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] || bs != [ws[1]] {
            return Err(self.mismatch("affine", format!("x {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let mut out = xs.clone();
        *out.last_mut().unwrap() = ws[1];
        Ok(self.push(Op::Affine { x, weight, bias }, out))
    }

    /// `a · bᵀ` for `a: [n, d]`, `b: [m, d]`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let as_ = self.check_id("matmul_t", a)?.to_vec();
        let bs = self.check_id("matmul_t", b)?.to_vec();
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[1] {
            return Err(self.mismatch("matmul_t", format!("a {as_:?}, b {bs:?}")));
        }
        Ok(self.push(Op::MatMulT { a, b }, vec![as_[0], bs[0]]))
    }

    /// 2-D convolution, `x: [n, c, h, w]`, `weight: [o, c, kh, kw]`, `bias: [o]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let xs = self.check_id("conv2d", x)?.to_vec();
        let ws = self.check_id("conv2d", weight)?.to_vec();
        let bs = self.check_id("conv2d", bias)?.to_vec();
        let ok = xs.len() == 4
            && ws.len() == 4
            && xs[1] == ws[1]
            && bs == [ws[0]]
            && stride > 0
            && xs[2] + 2 * padding >= ws[2]
            && xs[3] + 2 * padding >= ws[3];
        if !ok {
            return Err(self.mismatch(
                "conv2d",
                format!("x {xs:?}, weight {ws:?}, bias {bs:?}, stride {stride}, padding {padding}"),
            ));
        }
        let oh = (xs[2] + 2 * padding - ws[2]) / stride + 1;
        let ow = (xs[3] + 2 * padding - ws[3]) / stride + 1;
        Ok(self.push(
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                padding,
            },
            vec![xs[0], ws[0], oh, ow],
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let xs = self.check_id("reshape", x)?.to_vec();
        if numel(&xs) != numel(shape) {
            return Err(self.mismatch("reshape", format!("{xs:?} -> {shape:?}")));
        }
        Ok(self.push(Op::Reshape(x), shape.to_vec()))
    }

    fn unary(&mut self, op: Op, x: NodeId) -> Result<NodeId> {
        let shape = self.check_id(op.name(), x)?.to_vec();
        Ok(self.push(op, shape))
    }

    fn binary_same(&mut self, op: Op, a: NodeId, b: NodeId, out_rows: bool) -> Result<NodeId> {
        let name = op.name();
        let as_ = self.check_id(name, a)?.to_vec();
        let bs = self.check_id(name, b)?.to_vec();
        if as_ != bs {
            return Err(self.mismatch(name, format!("{as_:?} vs {bs:?}")));
        }
        let shape = if out_rows { lead(&as_) } else { as_ };
        Ok(self.push(op, shape))
    }

    fn row_reduce(&mut self, op: Op, x: NodeId) -> Result<NodeId> {
        let xs = self.check_id(op.name(), x)?.to_vec();
        if xs.is_empty() {
            return Err(self.mismatch(op.name(), "needs rank >= 1".into()));
        }
        Ok(self.push(op, lead(&xs)))
    }

    fn row_wise(&mut self, op: Op, x: NodeId) -> Result<NodeId> {
        let xs = self.check_id(op.name(), x)?.to_vec();
        if xs.is_empty() || xs[xs.len() - 1] == 0 {
            return Err(self.mismatch(op.name(), format!("needs non-empty rows, got {xs:?}")));
        }
        Ok(self.push(op, xs))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu(x), x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Tanh(x), x)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Exp(x), x)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.row_wise(Op::Softmax(x), x)
    }

    /// Log-softmax over the last axis, computed directly.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.row_wise(Op::LogSoftmax(x), x)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(Op::Add(a, b), a, b, false)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(Op::Sub(a, b), a, b, false)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(Op::Mul(a, b), a, b, false)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(Op::Minimum(a, b), a, b, false)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.unary(Op::Scale(x, factor), x)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi {
            return Err(self.mismatch("clamp", format!("lo {lo} > hi {hi}")));
        }
        self.unary(Op::Clamp { x, lo, hi }, x)
    }

    /// Euclidean norm of each row.
    pub fn l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        self.row_reduce(Op::L2Norm(x), x)
    }

    /// Rows scaled to unit Euclidean norm. Zero rows fail at evaluation.
    pub fn normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.row_wise(Op::NormalizeRows(x), x)
    }

    /// Row-wise cosine similarity.
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(Op::CosineSimilarity(a, b), a, b, true)
    }

    /// Row-wise squared Euclidean distance.
    pub fn squared_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(Op::SquaredDistance(a, b), a, b, true)
    }

    /// Row-wise `-Σ target · log_probs`.
    pub fn cross_entropy(&mut self, target: NodeId, log_probs: NodeId) -> Result<NodeId> {
        self.binary_same(
            Op::CrossEntropy { target, log_probs },
            target,
            log_probs,
            true,
        )
    }

    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.row_reduce(Op::SumRows(x), x)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id("sum", x)?;
        Ok(self.push(Op::Sum(x), vec![]))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.check_id("mean", x)?;
        if numel(xs) == 0 {
            return Err(self.mismatch("mean", "mean of empty tensor".into()));
        }
        Ok(self.push(Op::Mean(x), vec![]))
    }

    /// Rows of a rank-2 tensor selected (with repetition) by `indices`.
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let xs = self.check_id("gather_rows", x)?.to_vec();
        if xs.len() != 2 {
            return Err(self.mismatch("gather_rows", format!("needs rank 2, got {xs:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= xs[0]) {
            return Err(DiffError::IndexOutOfRange {
                node: self.nodes.len(),
                op: "gather_rows",
                index: bad,
                bound: xs[0],
            });
        }
        Ok(self.push(
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            vec![indices.len(), xs[1]],
        ))
    }

    /// Entry `columns[i]` of row `i` of a rank-2 tensor.
    pub fn pick_columns(&mut self, x: NodeId, columns: &[usize]) -> Result<NodeId> {
        let xs = self.check_id("pick_columns", x)?.to_vec();
        if xs.len() != 2 || xs[0] != columns.len() {
            return Err(self.mismatch(
                "pick_columns",
                format!("x {xs:?} with {} columns", columns.len()),
            ));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= xs[1]) {
            return Err(DiffError::IndexOutOfRange {
                node: self.nodes.len(),
                op: "pick_columns",
                index: bad,
                bound: xs[1],
            });
        }
        Ok(self.push(
            Op::PickColumns {
                x,
                columns: columns.to_vec(),
            },
            vec![xs[0]],
        ))
    }

    /// Identity in the forward pass; blocks every gradient in the backward pass.
    pub fn stop_gradient(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::StopGradient(x), x)
    }
}

pub(crate) fn lead(shape: &[usize]) -> Vec<usize> {
    shape[..shape.len().saturating_sub(1)].to_vec()
}

pub(crate) fn rows_last(shape: &[usize]) -> (usize, usize) {
    (row_count(shape), shape.last().copied().unwrap_or(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::new();
        let x = g.input("x", &[2, 3]);
        let w = g.param("w", &[4, 5]);
        let b = g.param("b", &[5]);
        match g.affine(x, w, b) {
            Err(DiffError::ShapeMismatch { node, op, .. }) => {
                assert_eq!(node, 3);
                assert_eq!(op, "affine");
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn stop_gradient_cuts_requires_grad() {
        let mut g = Graph::new();
        let p = g.param("p", &[3]);
        let s = g.stop_gradient(p).unwrap();
        let y = g.mul(s, s).unwrap();
        assert!(g.requires_grad(p));
        assert!(!g.requires_grad(y));
    }

    #[test]
    fn conv_output_shape() {
        let mut g = Graph::new();
        let x = g.input("x", &[2, 1, 13, 13]);
        let w = g.param("w", &[16, 1, 3, 3]);
        let b = g.param("b", &[16]);
        let y = g.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 16, 7, 7]);
    }
}
