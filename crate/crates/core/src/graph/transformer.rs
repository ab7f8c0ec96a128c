use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Node, NodeId, Op, TensorShape};

/// A transformer encoder configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchSample {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub num_heads: usize,
}

impl ArchSample {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| Err(GraphError::InvalidArch(msg));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if self.hidden_size == 0 || self.num_heads == 0 {
            return bad("hidden_size and num_heads must be positive".into());
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.ffn_size < self.hidden_size {
            return bad(format!(
                "ffn_size {} smaller than hidden_size {}",
                self.ffn_size, self.hidden_size
            ));
        }
        Ok(())
    }

    /// Weight count of the encoder blocks (projection and FFN matrices).
    pub fn param_count(&self) -> u64 {
        let (h, f) = (self.hidden_size as u64, self.ffn_size as u64);
        self.num_layers as u64 * (4 * h * h + 2 * h * f)
    }
}

/// Nodes emitted per encoder block: six weight inputs plus fifteen ops
/// (Q/K/V projections, K transpose, scores, softmax, context, output
/// projection, residual add, layernorm, FFN up, GELU, FFN down, residual
/// add, layernorm).
pub const NODES_PER_BLOCK: usize = 21;

/// One activation input plus [`NODES_PER_BLOCK`] per layer.
pub fn transformer_node_count(num_layers: usize) -> usize {
    1 + NODES_PER_BLOCK * num_layers
}

/// Builds the encoder graph with `seq_len` rows of activations. Weights are
/// graph inputs so large configurations never allocate. Attention heads are
/// folded into single MatMuls; head count does not change the graph.
pub fn build_transformer_graph(arch: &ArchSample, seq_len: usize) -> Result<Graph, GraphError> {
    arch.validate()?;
    if seq_len == 0 {
        return Err(GraphError::InvalidArch("seq_len must be at least 1".into()));
    }
    let (s, h, f) = (seq_len, arch.hidden_size, arch.ffn_size);
    let mut nodes: Vec<Node> = Vec::with_capacity(transformer_node_count(arch.num_layers));
    let mut push = |op: Op, inputs: Vec<NodeId>| -> NodeId {
        let id = nodes.len();
        nodes.push(Node {
            id,
            op,
            inputs,
            shape: None,
        });
        id
    };
    let input = |rows, cols| Op::Input {
        shape: TensorShape::matrix(rows, cols),
    };

    let mut x = push(input(s, h), vec![]);
    for _ in 0..arch.num_layers {
        let wq = push(input(h, h), vec![]);
        let wk = push(input(h, h), vec![]);
        let wv = push(input(h, h), vec![]);
        let q = push(Op::MatMul, vec![x, wq]);
        let k = push(Op::MatMul, vec![x, wk]);
        let v = push(Op::MatMul, vec![x, wv]);
        let kt = push(Op::Transpose { perm: vec![1, 0] }, vec![k]);
        let scores = push(Op::MatMul, vec![q, kt]);
        let probs = push(Op::Softmax, vec![scores]);
        let ctx = push(Op::MatMul, vec![probs, v]);
        let wo = push(input(h, h), vec![]);
        let attn = push(Op::MatMul, vec![ctx, wo]);
        let res1 = push(Op::Add, vec![x, attn]);
        let norm1 = push(Op::LayerNorm, vec![res1]);
        let w1 = push(input(h, f), vec![]);
        let up = push(Op::MatMul, vec![norm1, w1]);
        let act = push(Op::Gelu, vec![up]);
        let w2 = push(input(f, h), vec![]);
        let down = push(Op::MatMul, vec![act, w2]);
        let res2 = push(Op::Add, vec![norm1, down]);
        x = push(Op::LayerNorm, vec![res2]);
    }
    Graph::new(nodes, vec![x])
}

/// Multiply-adds count two flops.
pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

/// Closed-form flop count of [`build_transformer_graph`]: MatMuls at
/// `2*M*K*N`, elementwise and row-wise ops at one flop per element,
/// transposes free.
pub fn flops_estimate(arch: &ArchSample, seq_len: usize) -> u64 {
    let (s, h, f) = (seq_len, arch.hidden_size, arch.ffn_size);
    let matmuls = 4 * matmul_flops(s, h, h)
        + matmul_flops(s, h, s)
        + matmul_flops(s, s, h)
        + matmul_flops(s, h, f)
        + matmul_flops(s, f, h);
    let elementwise = (s * s + 4 * s * h + s * f) as u64;
    arch.num_layers as u64 * (matmuls + elementwise)
}

/// Flop count by walking an inferred graph with the same conventions as
/// [`flops_estimate`].
pub fn graph_flops(g: &Graph) -> Result<u64, GraphError> {
    let mut total = 0;
    for node in g.nodes() {
        let shape = g.shape(node.id)?;
        total += match &node.op {
            Op::MatMul => {
                let a = g.shape(node.inputs[0])?;
                matmul_flops(a.dims()[0], a.dims()[1], shape.dims()[1])
            }
            Op::Add | Op::Mul | Op::Gelu | Op::Softmax | Op::LayerNorm => shape.numel() as u64,
            Op::Fused(block) => block.expr.flops(),
            Op::Input { .. } | Op::Const { .. } | Op::Transpose { .. } | Op::Reshape { .. } => 0,
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{count_metrics, infer_shapes, OpKind};

    fn arch(l: usize, h: usize, f: usize, a: usize) -> ArchSample {
        ArchSample {
            num_layers: l,
            hidden_size: h,
            ffn_size: f,
            num_heads: a,
        }
    }

    #[test]
    fn tiny_block_node_count() {
        let g = build_transformer_graph(&arch(1, 4, 8, 1), 2).unwrap();
        // Counted by hand from the construction above.
        assert_eq!(g.len(), 22);
        assert_eq!(g.len(), transformer_node_count(1));
        let g = infer_shapes(g).unwrap();
        let count = |k: OpKind| g.nodes().iter().filter(|n| n.kind() == k).count();
        assert_eq!(count(OpKind::Input), 7);
        assert_eq!(count(OpKind::MatMul), 8);
        assert_eq!(count(OpKind::Add), 2);
        assert_eq!(count(OpKind::LayerNorm), 2);
        assert_eq!(g.shape(g.outputs()[0]).unwrap(), &TensorShape::matrix(2, 4));
    }

    #[test]
    fn zero_layers_rejected() {
        assert!(build_transformer_graph(&arch(0, 4, 8, 1), 2).is_err());
        assert!(build_transformer_graph(&arch(1, 6, 8, 4), 2).is_err());
        assert!(build_transformer_graph(&arch(1, 8, 4, 1), 2).is_err());
        assert!(build_transformer_graph(&arch(1, 4, 8, 1), 0).is_err());
    }

    #[test]
    fn bert_base_structure() {
        let g = infer_shapes(build_transformer_graph(&arch(12, 768, 3072, 12), 128).unwrap())
            .unwrap();
        assert_eq!(g.len(), 1 + 12 * 21);
        let m = count_metrics(&g).unwrap();
        assert_eq!(m.layer_count, 12 * 15);
        assert_eq!(graph_flops(&g).unwrap(), flops_estimate(&arch(12, 768, 3072, 12), 128));
    }

    #[test]
    fn single_matmul_flops() {
        assert_eq!(matmul_flops(2, 2, 2), 16);
    }

    #[test]
    fn table_flops_anchors() {
        let base = flops_estimate(&arch(12, 768, 3072, 12), 128) as f64;
        let distil = flops_estimate(&arch(6, 768, 3072, 12), 128) as f64;
        assert!((base / 21.8e9 - 1.0).abs() <= 0.15, "{base}");
        assert!((distil / 10.9e9 - 1.0).abs() <= 0.15, "{distil}");
    }

    #[test]
    fn flops_monotone_in_each_argument() {
        let base = arch(4, 256, 1024, 4);
        let f0 = flops_estimate(&base, 64);
        assert!(flops_estimate(&arch(5, 256, 1024, 4), 64) > f0);
        assert!(flops_estimate(&arch(4, 320, 1024, 4), 64) > f0);
        assert!(flops_estimate(&arch(4, 256, 1025, 4), 64) > f0);
        assert!(flops_estimate(&base, 65) > f0);
    }
}
