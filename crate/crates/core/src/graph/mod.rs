//! Tensor computational-graph IR.
//!
//! A [`Graph`] is a DAG of [`Node`]s whose ids are dense indices into the
//! node vector. Graphs come from [`parse_graph`] or
//! [`build_transformer_graph`], get shapes from [`infer_shapes`], and are
//! immutable afterwards; every pass produces a new graph.

mod format;
mod interp;
mod metrics;
mod shape;
pub(crate) mod tensor;
mod transformer;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusedBlock;

pub use format::{parse_graph, write_graph, GraphDocument, NodeAttrs, NodeDocument};
pub(crate) use interp::{check_bindings, eval_node};
pub use interp::{reference_execute, reference_execute_in_order, seeded_bindings, Bindings, Outputs};
pub(crate) use metrics::region_of;
pub use metrics::{count_metrics, poly_regions, GraphMetrics};
pub use shape::{broadcast_shapes, infer_shapes};
pub use tensor::{gelu, Tensor};
pub use transformer::{
    build_transformer_graph, flops_estimate, graph_flops, matmul_flops, transformer_node_count,
    ArchSample, NODES_PER_BLOCK,
};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Document(String),
    #[error("node {0}: duplicate id")]
    DuplicateId(i64),
    #[error("node {id}: unknown op kind `{op}`")]
    UnknownOp { id: i64, op: String },
    #[error("node {id}: input {input} does not exist")]
    DanglingInput { id: i64, input: i64 },
    #[error("output {0} does not exist")]
    DanglingOutput(i64),
    #[error("graph has no outputs")]
    NoOutputs,
    #[error("cycle detected through node {0}")]
    Cycle(i64),
    #[error("node {id}: {op} expects {expected} inputs, found {found}")]
    Arity {
        id: i64,
        op: OpKind,
        expected: usize,
        found: usize,
    },
    #[error("node {id}: invalid attributes: {reason}")]
    Attrs { id: i64, reason: String },
    #[error("node {id}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        id: NodeId,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("node {id}: incompatible operand shapes {lhs} and {rhs} for {op}")]
    ShapeMismatch {
        id: NodeId,
        op: OpKind,
        lhs: TensorShape,
        rhs: TensorShape,
    },
    #[error("node {0}: shapes have not been inferred")]
    ShapesMissing(NodeId),
    #[error("input node {0} has no binding")]
    MissingBinding(NodeId),
    #[error("input node {id}: binding has shape {found}, expected {expected}")]
    BindingShape {
        id: NodeId,
        expected: TensorShape,
        found: TensorShape,
    },
    #[error("node {0} is not an input")]
    NotAnInput(NodeId),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("fused node {0} cannot be handled here")]
    FusedNode(NodeId),
}

/// Ordered tensor dimensions, rank 1 to 4, every dim at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub const MAX_RANK: usize = 4;

    pub fn new(dims: Vec<usize>) -> Result<Self, String> {
        if dims.is_empty() || dims.len() > Self::MAX_RANK {
            return Err(format!("rank {} outside 1..=4", dims.len()));
        }
        if dims.contains(&0) {
            return Err("zero-sized dimension".into());
        }
        Ok(Self(dims))
    }

    /// Shorthand for 2-D shapes in code that knows the dims are valid.
    pub fn matrix(rows: usize, cols: usize) -> Self {
        Self::new(vec![rows, cols]).expect("matrix dims must be positive")
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn bytes(&self) -> u64 {
        self.numel() as u64 * 4
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for d in (0..self.0.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.0[d + 1];
        }
        strides
    }

    /// Rows and columns when viewed as a matrix: the last dim is the row
    /// length and everything before it is flattened into rows.
    pub fn as_rows(&self) -> (usize, usize) {
        let cols = *self.0.last().expect("rank >= 1");
        (self.numel() / cols, cols)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", dims.join("x"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Transpose,
    Reshape,
    Gelu,
    Softmax,
    LayerNorm,
    Input,
    Const,
    Fused,
}

impl OpKind {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "matmul" => Self::MatMul,
            "add" => Self::Add,
            "mul" => Self::Mul,
            "transpose" => Self::Transpose,
            "reshape" => Self::Reshape,
            "gelu" => Self::Gelu,
            "softmax" => Self::Softmax,
            "layernorm" => Self::LayerNorm,
            "input" => Self::Input,
            "const" => Self::Const,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MatMul => "matmul",
            Self::Add => "add",
            Self::Mul => "mul",
            Self::Transpose => "transpose",
            Self::Reshape => "reshape",
            Self::Gelu => "gelu",
            Self::Softmax => "softmax",
            Self::LayerNorm => "layernorm",
            Self::Input => "input",
            Self::Const => "const",
            Self::Fused => "fused",
        }
    }

    /// Fixed input count. `None` for fused blocks, whose arity is the
    /// number of distinct leaves they read.
    pub fn arity(self) -> Option<usize> {
        match self {
            Self::MatMul | Self::Add | Self::Mul => Some(2),
            Self::Transpose | Self::Reshape | Self::Gelu | Self::Softmax | Self::LayerNorm => {
                Some(1)
            }
            Self::Input | Self::Const => Some(0),
            Self::Fused => None,
        }
    }

    /// Add, Mul and MatMul: the kinds that make up polynomial regions.
    pub fn is_polynomial(self) -> bool {
        matches!(self, Self::Add | Self::Mul | Self::MatMul)
    }

    /// Kinds computed independently per output element.
    pub fn is_pointwise(self) -> bool {
        matches!(self, Self::Add | Self::Mul | Self::Gelu)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerClass {
    ComputeIntensive,
    MemoryIntensive,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { shape: TensorShape },
    Const { value: Tensor },
    MatMul,
    Add,
    Mul,
    Transpose { perm: Vec<usize> },
    Reshape { target: TensorShape },
    Gelu,
    Softmax,
    LayerNorm,
    Fused(Box<FusedBlock>),
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Input { .. } => OpKind::Input,
            Op::Const { .. } => OpKind::Const,
            Op::MatMul => OpKind::MatMul,
            Op::Add => OpKind::Add,
            Op::Mul => OpKind::Mul,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Gelu => OpKind::Gelu,
            Op::Softmax => OpKind::Softmax,
            Op::LayerNorm => OpKind::LayerNorm,
            Op::Fused(_) => OpKind::Fused,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Option<TensorShape>,
}

impl Node {
    pub fn kind(&self) -> OpKind {
        self.op.kind()
    }

    /// Shape after inference. Panics when called on an uninferred graph;
    /// use [`Graph::shape`] for a fallible lookup.
    pub fn shape(&self) -> &TensorShape {
        self.shape.as_ref().expect("shapes not inferred")
    }

    pub fn fused(&self) -> Option<&FusedBlock> {
        match &self.op {
            Op::Fused(block) => Some(block),
            _ => None,
        }
    }
}

/// MatMul (and any fused block containing one) reads each input element
/// more than once; everything else touches each input element once.
pub fn classify_node(node: &Node) -> LayerClass {
    match &node.op {
        Op::MatMul => LayerClass::ComputeIntensive,
        Op::Fused(block) if block.expr.contains_matmul() => LayerClass::ComputeIntensive,
        _ => LayerClass::MemoryIntensive,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
}

impl Graph {
    /// Builds a graph from nodes whose ids equal their positions, checking
    /// references, arity and acyclicity.
    pub fn new(nodes: Vec<Node>, outputs: Vec<NodeId>) -> Result<Self, GraphError> {
        for (pos, node) in nodes.iter().enumerate() {
            if node.id != pos {
                return Err(GraphError::Document(format!(
                    "node at position {pos} has id {}",
                    node.id
                )));
            }
            if let Some(expected) = node.kind().arity() {
                if node.inputs.len() != expected {
                    return Err(GraphError::Arity {
                        id: pos as i64,
                        op: node.kind(),
                        expected,
                        found: node.inputs.len(),
                    });
                }
            }
            for &input in &node.inputs {
                if input >= nodes.len() {
                    return Err(GraphError::DanglingInput {
                        id: pos as i64,
                        input: input as i64,
                    });
                }
            }
        }
        if outputs.is_empty() {
            return Err(GraphError::NoOutputs);
        }
        if let Some(&bad) = outputs.iter().find(|&&o| o >= nodes.len()) {
            return Err(GraphError::DanglingOutput(bad as i64));
        }
        let graph = Self { nodes, outputs };
        graph.topo_order()?;
        Ok(graph)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.inputs.len()).sum()
    }

    pub fn is_output(&self, id: NodeId) -> bool {
        self.outputs.contains(&id)
    }

    pub fn shape(&self, id: NodeId) -> Result<&TensorShape, GraphError> {
        self.nodes[id]
            .shape
            .as_ref()
            .ok_or(GraphError::ShapesMissing(id))
    }

    pub fn is_inferred(&self) -> bool {
        self.nodes.iter().all(|n| n.shape.is_some())
    }

    pub fn input_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind() == OpKind::Input)
            .map(|n| n.id)
            .collect()
    }

    /// Consumer node ids per node; a consumer reading the same producer
    /// twice is listed twice.
    pub fn consumers(&self) -> Vec<Vec<NodeId>> {
        let mut consumers = vec![Vec::new(); self.nodes.len()];
        for node in &self.nodes {
            for &input in &node.inputs {
                consumers[input].push(node.id);
            }
        }
        consumers
    }

    /// Kahn's algorithm with the smallest ready id first, so the order is
    /// deterministic.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let mut indegree: Vec<usize> = self.nodes.iter().map(|n| n.inputs.len()).collect();
        let consumers = self.consumers();
        let mut ready: BTreeSet<NodeId> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| i)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for &c in &consumers[id] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = indegree.iter().position(|&d| d > 0).unwrap_or(0);
            return Err(GraphError::Cycle(stuck as i64));
        }
        Ok(order)
    }

    pub(crate) fn with_shapes(mut self, shapes: Vec<TensorShape>) -> Self {
        for (node, shape) in self.nodes.iter_mut().zip(shapes) {
            node.shape = Some(shape);
        }
        self
    }
}
