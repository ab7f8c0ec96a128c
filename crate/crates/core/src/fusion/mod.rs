//! Polynomial layer fusion.
//!
//! Add, Mul and MatMul regions are lifted into [`PolyExpr`] trees,
//! normalized under commutativity and associativity, and factored with the
//! distributive law. Pointwise chains and MatMul epilogues are fused
//! vertically. Candidates are selected greedily into a non-overlapping
//! [`FusionPlan`] and each accepted candidate becomes one fused node.

mod candidates;
mod plan;
mod poly;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NodeId, TensorShape};

pub use candidates::{enumerate_candidates, extract_poly, Candidate};
pub use plan::{fuse_graph, graph_fingerprint, rewrite_graph, select_plan, FusionOutcome, FusionPlan};
pub use poly::{apply_distributive_factor, canonicalize, PolyExpr, PolyOp};
pub use report::{fuse_report, CandidateReport, FuseReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph shapes have not been inferred")]
    NotInferred,
    #[error("node {0}: not an add, mul or matmul node")]
    NotPolynomial(NodeId),
    #[error("fusion plan does not match this graph: {0}")]
    StalePlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Region rewritten with the distributive law.
    Algebraic,
    /// Chain of pointwise nodes in one loop nest.
    Vertical,
    /// Pointwise consumers fused onto a MatMul.
    Epilogue,
}

/// Payload of a fused node. Leaves of `expr` are slot indices into the
/// node's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedBlock {
    pub kind: FusionKind,
    pub expr: PolyExpr,
    pub leaf_shapes: Vec<TensorShape>,
    /// Ids of the replaced nodes in the graph the block was built from.
    pub covered: Vec<NodeId>,
}

impl FusedBlock {
    pub fn arity(&self) -> usize {
        self.leaf_shapes.len()
    }

    /// Buffers the block still materializes internally: MatMul results
    /// below the root and non-leaf MatMul operands.
    pub fn scratch_bytes(&self) -> u64 {
        fn walk(e: &PolyExpr, root: bool, total: &mut u64) {
            if let PolyOp::MatMul(a, b) = &e.op {
                if !root {
                    *total += e.shape.bytes();
                }
                for operand in [a, b] {
                    if !operand.is_leaf() && !matches!(operand.op, PolyOp::MatMul(..)) {
                        *total += operand.shape.bytes();
                    }
                }
            }
            for c in e.children() {
                walk(c, false, total);
            }
        }
        let mut total = 0;
        walk(&self.expr, true, &mut total);
        total
    }
}
