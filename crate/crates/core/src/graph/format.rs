//! JSON graph documents.
//!
//! ```json
//! { "nodes": [ { "id": 0, "op": "input", "inputs": [], "attrs": { "shape": [2, 3] } },
//!              { "id": 1, "op": "gelu",  "inputs": [0] } ],
//!   "outputs": [1] }
//! ```
//!
//! Ids may be any distinct integers; they are renumbered densely in
//! ascending order. Diagnostics always name the id used in the document.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Node, NodeId, Op, OpKind, Tensor, TensorShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub nodes: Vec<NodeDocument>,
    pub outputs: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: i64,
    pub op: String,
    #[serde(default)]
    pub inputs: Vec<i64>,
    #[serde(default, skip_serializing_if = "NodeAttrs::is_empty")]
    pub attrs: NodeAttrs,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeAttrs {
    /// Input/const shape, or the reshape target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    /// Flat row-major const payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<f32>>,
    /// Transpose axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perm: Option<Vec<usize>>,
}

impl NodeAttrs {
    fn is_empty(&self) -> bool {
        self.shape.is_none() && self.data.is_none() && self.perm.is_none()
    }
}

/// Parses and validates a graph document. Shapes are not inferred.
pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let doc: GraphDocument =
        serde_json::from_str(text).map_err(|e| GraphError::Document(e.to_string()))?;
    doc.into_graph()
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<Graph, GraphError> {
        let mut dense: BTreeMap<i64, NodeId> = BTreeMap::new();
        for node in &self.nodes {
            if dense.insert(node.id, 0).is_some() {
                return Err(GraphError::DuplicateId(node.id));
            }
        }
        for (index, slot) in dense.values_mut().enumerate() {
            *slot = index;
        }

        let mut by_id: Vec<&NodeDocument> = self.nodes.iter().collect();
        by_id.sort_by_key(|n| n.id);
        let mut nodes = Vec::with_capacity(by_id.len());
        for doc in by_id {
            let kind = OpKind::from_name(&doc.op).ok_or_else(|| GraphError::UnknownOp {
                id: doc.id,
                op: doc.op.clone(),
            })?;
            let mut inputs = Vec::with_capacity(doc.inputs.len());
            for input in &doc.inputs {
                let dense_id = dense.get(input).ok_or(GraphError::DanglingInput {
                    id: doc.id,
                    input: *input,
                })?;
                inputs.push(*dense_id);
            }
            let expected = kind.arity().expect("document kinds have fixed arity");
            if inputs.len() != expected {
                return Err(GraphError::Arity {
                    id: doc.id,
                    op: kind,
                    expected,
                    found: inputs.len(),
                });
            }
            nodes.push(Node {
                id: dense[&doc.id],
                op: op_from_attrs(doc.id, kind, &doc.attrs)?,
                inputs,
                shape: None,
            });
        }

        let mut outputs = Vec::with_capacity(self.outputs.len());
        for out in &self.outputs {
            outputs.push(*dense.get(out).ok_or(GraphError::DanglingOutput(*out))?);
        }
        let back: Vec<i64> = dense.keys().copied().collect();
        Graph::new(nodes, outputs).map_err(|e| match e {
            // Report document ids, not dense ones.
            GraphError::Cycle(id) => GraphError::Cycle(back[id as usize]),
            other => other,
        })
    }
}

fn op_from_attrs(id: i64, kind: OpKind, attrs: &NodeAttrs) -> Result<Op, GraphError> {
    let bad = |reason: &str| GraphError::Attrs {
        id,
        reason: reason.to_string(),
    };
    let shape = |dims: &Option<Vec<usize>>| -> Result<TensorShape, GraphError> {
        let dims = dims.clone().ok_or_else(|| bad("missing `shape`"))?;
        TensorShape::new(dims).map_err(|r| bad(&r))
    };
    let allow = |shape_ok: bool, data_ok: bool, perm_ok: bool| -> Result<(), GraphError> {
        if (!shape_ok && attrs.shape.is_some())
            || (!data_ok && attrs.data.is_some())
            || (!perm_ok && attrs.perm.is_some())
        {
            return Err(bad(&format!("unexpected attribute for `{kind}`")));
        }
        Ok(())
    };
    Ok(match kind {
        OpKind::Input => {
            allow(true, false, false)?;
            Op::Input {
                shape: shape(&attrs.shape)?,
            }
        }
        OpKind::Const => {
            allow(true, true, false)?;
            let shape = shape(&attrs.shape)?;
            let data = attrs.data.clone().ok_or_else(|| bad("missing `data`"))?;
            Op::Const {
                value: Tensor::new(shape, data).map_err(|r| bad(&r))?,
            }
        }
        OpKind::Reshape => {
            allow(true, false, false)?;
            Op::Reshape {
                target: shape(&attrs.shape)?,
            }
        }
        OpKind::Transpose => {
            allow(false, false, true)?;
            // Missing perm means a 2-D transpose.
            Op::Transpose {
                perm: attrs.perm.clone().unwrap_or_else(|| vec![1, 0]),
            }
        }
        _ => {
            allow(false, false, false)?;
            match kind {
                OpKind::MatMul => Op::MatMul,
                OpKind::Add => Op::Add,
                OpKind::Mul => Op::Mul,
                OpKind::Gelu => Op::Gelu,
                OpKind::Softmax => Op::Softmax,
                OpKind::LayerNorm => Op::LayerNorm,
                _ => unreachable!("handled above"),
            }
        }
    })
}

/// Serializes an unfused graph back to a document.
pub fn write_graph(g: &Graph) -> Result<GraphDocument, GraphError> {
    let mut nodes = Vec::with_capacity(g.len());
    for node in g.nodes() {
        let mut attrs = NodeAttrs::default();
        match &node.op {
            Op::Input { shape } => attrs.shape = Some(shape.dims().to_vec()),
            Op::Const { value } => {
                attrs.shape = Some(value.shape().dims().to_vec());
                attrs.data = Some(value.data().to_vec());
            }
            Op::Reshape { target } => attrs.shape = Some(target.dims().to_vec()),
            Op::Transpose { perm } => attrs.perm = Some(perm.clone()),
            Op::Fused(_) => return Err(GraphError::FusedNode(node.id)),
            _ => {}
        }
        nodes.push(NodeDocument {
            id: node.id as i64,
            op: node.kind().name().to_string(),
            inputs: node.inputs.iter().map(|&i| i as i64).collect(),
            attrs,
        });
    }
    Ok(GraphDocument {
        nodes,
        outputs: g.outputs().iter().map(|&o| o as i64).collect(),
    })
}
