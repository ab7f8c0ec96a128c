use super::{Graph, GraphError, Node, Op, TensorShape};

/// Elementwise result shape: equal shapes, or equal shapes except for a
/// leading dim of 1 on one side.
pub fn broadcast_shapes(a: &TensorShape, b: &TensorShape) -> Option<TensorShape> {
    if a == b {
        return Some(a.clone());
    }
    let (ad, bd) = (a.dims(), b.dims());
    if ad.len() != bd.len() || ad[1..] != bd[1..] {
        return None;
    }
    match (ad[0], bd[0]) {
        (1, _) => Some(b.clone()),
        (_, 1) => Some(a.clone()),
        _ => None,
    }
}

/// Annotates every node with its output shape. Existing annotations are
/// ignored and recomputed, so the pass is idempotent.
pub fn infer_shapes(g: Graph) -> Result<Graph, GraphError> {
    let order = g.topo_order()?;
    let mut shapes: Vec<Option<TensorShape>> = vec![None; g.len()];
    for id in order {
        let node = g.node(id);
        let inputs: Vec<&TensorShape> = node
            .inputs
            .iter()
            .map(|&i| shapes[i].as_ref().expect("topological order"))
            .collect();
        shapes[id] = Some(node_shape(node, &inputs)?);
    }
    let shapes = shapes.into_iter().map(|s| s.expect("all visited")).collect();
    Ok(g.with_shapes(shapes))
}

pub(crate) fn node_shape(node: &Node, inputs: &[&TensorShape]) -> Result<TensorShape, GraphError> {
    let id = node.id;
    let mismatch = |lhs: &TensorShape, rhs: &TensorShape| GraphError::ShapeMismatch {
        id,
        op: node.kind(),
        lhs: lhs.clone(),
        rhs: rhs.clone(),
    };
    Ok(match &node.op {
        Op::Input { shape } => shape.clone(),
        Op::Const { value } => value.shape().clone(),
        Op::Add | Op::Mul => {
            broadcast_shapes(inputs[0], inputs[1]).ok_or_else(|| mismatch(inputs[0], inputs[1]))?
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] {
                return Err(mismatch(a, b));
            }
            TensorShape::matrix(a.dims()[0], b.dims()[1])
        }
        Op::Transpose { perm } => {
            let dims = inputs[0].dims();
            let mut seen = vec![false; dims.len()];
            if perm.len() != dims.len() {
                return Err(GraphError::InvalidShape {
                    id,
                    shape: dims.to_vec(),
                    reason: format!("permutation {perm:?} does not match rank"),
                });
            }
            for &p in perm {
                if p >= dims.len() || std::mem::replace(&mut seen[p], true) {
                    return Err(GraphError::InvalidShape {
                        id,
                        shape: dims.to_vec(),
                        reason: format!("{perm:?} is not a permutation"),
                    });
                }
            }
            TensorShape::new(perm.iter().map(|&p| dims[p]).collect()).expect("permuted dims")
        }
        Op::Reshape { target } => {
            if target.numel() != inputs[0].numel() {
                return Err(mismatch(inputs[0], target));
            }
            target.clone()
        }
        Op::Gelu | Op::Softmax | Op::LayerNorm => inputs[0].clone(),
        Op::Fused(block) => {
            // A fused block is checked against the shapes of its leaves.
            let expected: Vec<&TensorShape> = block.leaf_shapes.iter().collect();
            if expected != inputs {
                return Err(GraphError::InvalidShape {
                    id,
                    shape: block.expr.shape.dims().to_vec(),
                    reason: "fused block leaves do not match producer shapes".into(),
                });
            }
            block.expr.shape.clone()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, OpKind};

    fn input(id: usize, rows: usize, cols: usize) -> Node {
        Node {
            id,
            op: Op::Input {
                shape: TensorShape::matrix(rows, cols),
            },
            inputs: vec![],
            shape: None,
        }
    }

    fn op(id: usize, op: Op, inputs: Vec<usize>) -> Node {
        Node {
            id,
            op,
            inputs,
            shape: None,
        }
    }

    #[test]
    fn matmul_shape() {
        let g = Graph::new(
            vec![input(0, 3, 5), input(1, 5, 7), op(2, Op::MatMul, vec![0, 1])],
            vec![2],
        )
        .unwrap();
        let g = infer_shapes(g).unwrap();
        assert_eq!(g.node(2).shape(), &TensorShape::matrix(3, 7));
    }

    #[test]
    fn broadcast_add() {
        let g = Graph::new(
            vec![input(0, 4, 6), input(1, 1, 6), op(2, Op::Add, vec![0, 1])],
            vec![2],
        )
        .unwrap();
        let g = infer_shapes(g).unwrap();
        assert_eq!(g.node(2).shape(), &TensorShape::matrix(4, 6));
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let g = Graph::new(
            vec![input(0, 2, 3), input(1, 3, 2), op(2, Op::Add, vec![0, 1])],
            vec![2],
        )
        .unwrap();
        let err = infer_shapes(g).unwrap_err();
        assert_eq!(
            err,
            GraphError::ShapeMismatch {
                id: 2,
                op: OpKind::Add,
                lhs: TensorShape::matrix(2, 3),
                rhs: TensorShape::matrix(3, 2),
            }
        );
        assert!(err.to_string().contains("2x3") && err.to_string().contains("3x2"));
    }

    #[test]
    fn only_leading_dim_broadcasts() {
        let a = TensorShape::matrix(4, 6);
        assert!(broadcast_shapes(&a, &TensorShape::matrix(4, 1)).is_none());
        assert!(broadcast_shapes(&a, &TensorShape::new(vec![6]).unwrap()).is_none());
        assert_eq!(broadcast_shapes(&TensorShape::matrix(1, 6), &a), Some(a));
    }

    #[test]
    fn inference_is_idempotent() {
        let g = Graph::new(
            vec![
                input(0, 2, 3),
                op(1, Op::Transpose { perm: vec![1, 0] }, vec![0]),
                op(2, Op::MatMul, vec![0, 1]),
                op(3, Op::Softmax, vec![2]),
            ],
            vec![3],
        )
        .unwrap();
        let once = infer_shapes(g).unwrap();
        let twice = infer_shapes(once.clone()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.node(3).shape(), &TensorShape::matrix(2, 2));
    }
}
