//! Layer, computation and intermediate-buffer accounting.
//!
//! Computation count follows the symbolic expression of the graph: Add,
//! Mul and MatMul nodes are grouped into polynomial regions (maximal
//! subgraphs whose internal values are not consumed elsewhere), each region
//! is expanded into a tree, and every operator application in those trees
//! counts once. A region value shared by two consumers inside the region is
//! therefore counted twice, exactly like writing the expression out by hand.
//! Gelu, Softmax and LayerNorm count one each; Transpose and Reshape move
//! data and count zero; a fused block counts the operators of its
//! rewritten expression.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, NodeId, Op, OpKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub node_count: usize,
    pub edge_count: usize,
    pub layer_count: usize,
    pub computation_count: u64,
    pub intermediate_bytes: u64,
}

/// Members of the polynomial region rooted at `root`: the greatest set of
/// Add/Mul/MatMul nodes reachable upstream from `root` through such nodes
/// where every member other than `root` is not a graph output and has all
/// its consumers inside the set.
pub(crate) fn region_of(g: &Graph, consumers: &[Vec<NodeId>], root: NodeId) -> BTreeSet<NodeId> {
    let upstream = |set: &BTreeSet<NodeId>| -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([root]);
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            for &i in &g.node(id).inputs {
                if set.contains(&i) && seen.insert(i) {
                    stack.push(i);
                }
            }
        }
        seen
    };
    let poly: BTreeSet<NodeId> = g
        .nodes()
        .iter()
        .filter(|n| n.kind().is_polynomial())
        .map(|n| n.id)
        .collect();
    let mut members = upstream(&poly);
    loop {
        let keep: BTreeSet<NodeId> = members
            .iter()
            .copied()
            .filter(|&m| {
                m == root
                    || (!g.is_output(m) && consumers[m].iter().all(|c| members.contains(c)))
            })
            .collect();
        let next = upstream(&keep);
        if next == members {
            return members;
        }
        members = next;
    }
}

/// Partition of all Add/Mul/MatMul nodes into regions, keyed by root.
pub fn poly_regions(g: &Graph) -> Result<BTreeMap<NodeId, BTreeSet<NodeId>>, GraphError> {
    let consumers = g.consumers();
    let mut assigned = vec![false; g.len()];
    let mut regions = BTreeMap::new();
    for &id in g.topo_order()?.iter().rev() {
        if assigned[id] || !g.node(id).kind().is_polynomial() {
            continue;
        }
        let members = region_of(g, &consumers, id);
        for &m in &members {
            debug_assert!(!assigned[m], "regions are disjoint");
            assigned[m] = true;
        }
        regions.insert(id, members);
    }
    Ok(regions)
}

/// Operator applications in the tree expansion of `root` within `members`.
fn tree_ops(g: &Graph, members: &BTreeSet<NodeId>, root: NodeId) -> u64 {
    fn visit(
        g: &Graph,
        members: &BTreeSet<NodeId>,
        id: NodeId,
        memo: &mut BTreeMap<NodeId, u64>,
    ) -> u64 {
        if let Some(&v) = memo.get(&id) {
            return v;
        }
        let mut total = 1;
        for &i in &g.node(id).inputs {
            if members.contains(&i) {
                total += visit(g, members, i, memo);
            }
        }
        memo.insert(id, total);
        total
    }
    visit(g, members, root, &mut BTreeMap::new())
}

pub fn count_metrics(g: &Graph) -> Result<GraphMetrics, GraphError> {
    let mut layer_count = 0;
    let mut computation_count = 0u64;
    let mut intermediate_bytes = 0u64;
    for node in g.nodes() {
        let kind = node.kind();
        if matches!(kind, OpKind::Input | OpKind::Const) {
            continue;
        }
        layer_count += 1;
        if !g.is_output(node.id) {
            intermediate_bytes += g.shape(node.id)?.bytes();
        }
        match &node.op {
            Op::Gelu | Op::Softmax | Op::LayerNorm => computation_count += 1,
            Op::Fused(block) => {
                computation_count += block.expr.op_count();
                intermediate_bytes += block.scratch_bytes();
            }
            _ => {}
        }
    }
    for (root, members) in poly_regions(g)? {
        computation_count += tree_ops(g, &members, root);
    }
    Ok(GraphMetrics {
        node_count: g.len(),
        edge_count: g.edge_count(),
        layer_count,
        computation_count,
        intermediate_bytes,
    })
}
