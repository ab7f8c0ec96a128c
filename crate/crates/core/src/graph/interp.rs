//! Reference interpreter: naive per-op loops in topological order. Every
//! fusion and schedule is checked against this.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{self, Binary};
use super::{Graph, GraphError, NodeId, Op, OpKind, Tensor};

pub type Bindings = BTreeMap<NodeId, Tensor>;
pub type Outputs = BTreeMap<NodeId, Tensor>;

/// Uniform random values in [-1, 1) for every input, drawn in input-id
/// order from a ChaCha8 stream seeded with `seed`.
pub fn seeded_bindings(g: &Graph, seed: u64) -> Result<Bindings, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.input_ids()
        .into_iter()
        .map(|id| Ok((id, Tensor::random(g.shape(id)?.clone(), &mut rng))))
        .collect()
}

pub fn reference_execute(g: &Graph, bindings: &Bindings) -> Result<Outputs, GraphError> {
    let order = g.topo_order()?;
    reference_execute_in_order(g, bindings, &order)
}

/// Same as [`reference_execute`] with a caller-supplied topological order.
pub fn reference_execute_in_order(
    g: &Graph,
    bindings: &Bindings,
    order: &[NodeId],
) -> Result<Outputs, GraphError> {
    check_bindings(g, bindings)?;
    let mut values: Vec<Option<Tensor>> = vec![None; g.len()];
    for &id in order {
        let node = g.node(id);
        if node.kind() == OpKind::Fused {
            return Err(GraphError::FusedNode(id));
        }
        let inputs: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|&i| values[i].as_ref().expect("order is topological"))
            .collect();
        let value = match &node.op {
            Op::Input { .. } => bindings[&id].clone(),
            _ => eval_node(g, id, &inputs)?,
        };
        values[id] = Some(value);
    }
    Ok(g.outputs()
        .iter()
        .map(|&o| (o, values[o].clone().expect("outputs evaluated")))
        .collect())
}

pub(crate) fn check_bindings(g: &Graph, bindings: &Bindings) -> Result<(), GraphError> {
    for &id in bindings.keys() {
        if id >= g.len() || g.node(id).kind() != OpKind::Input {
            return Err(GraphError::NotAnInput(id));
        }
    }
    for id in g.input_ids() {
        let bound = bindings.get(&id).ok_or(GraphError::MissingBinding(id))?;
        let expected = match &g.node(id).op {
            Op::Input { shape } => shape,
            _ => unreachable!(),
        };
        if bound.shape() != expected {
            return Err(GraphError::BindingShape {
                id,
                expected: expected.clone(),
                found: bound.shape().clone(),
            });
        }
    }
    Ok(())
}

/// Evaluates one non-input, non-fused node from its input values.
pub(crate) fn eval_node(g: &Graph, id: NodeId, inputs: &[&Tensor]) -> Result<Tensor, GraphError> {
    let node = g.node(id);
    let shape = g.shape(id)?;
    Ok(match &node.op {
        Op::Const { value } => value.clone(),
        Op::Add => tensor::binary(Binary::Add, inputs[0], inputs[1], shape),
        Op::Mul => tensor::binary(Binary::Mul, inputs[0], inputs[1], shape),
        Op::MatMul => tensor::matmul(inputs[0], inputs[1], shape),
        Op::Transpose { perm } => tensor::transpose(inputs[0], perm, shape),
        Op::Reshape { target } => Tensor::new(target.clone(), inputs[0].data().to_vec())
            .expect("reshape preserves element count"),
        Op::Gelu => tensor::unary(inputs[0], tensor::gelu),
        Op::Softmax => tensor::softmax(inputs[0]),
        Op::LayerNorm => tensor::layernorm(inputs[0]),
        Op::Input { .. } | Op::Fused(_) => return Err(GraphError::FusedNode(id)),
    })
}
