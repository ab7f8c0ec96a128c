use std::collections::BTreeSet;

use serde::Serialize;

use super::plan::{rewrite_graph, FusionPlan};
use super::poly::{apply_distributive_factor, PolyExpr};
use super::{FusedBlock, FusionError, FusionKind};
use crate::codegen::{legality_check, AccessFunction, Dependence};
use crate::graph::{count_metrics, poly_regions, region_of, Graph, NodeId, Op, OpKind, TensorShape};

/// A rewritable subgraph and its effect on the graph metrics. Deltas are
/// `before - after`, measured by rewriting this candidate alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub kind: FusionKind,
    pub root: NodeId,
    pub covered: BTreeSet<NodeId>,
    /// Producers read by the fused node, in slot order.
    pub leaves: Vec<NodeId>,
    /// Rewritten expression over graph node ids.
    #[serde(serialize_with = "display")]
    pub expr: PolyExpr,
    pub delta_layers: i64,
    pub delta_computations: i64,
    pub delta_bytes: i64,
}

fn display<S: serde::Serializer>(e: &PolyExpr, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(e)
}

impl Candidate {
    fn new(kind: FusionKind, root: NodeId, covered: BTreeSet<NodeId>, expr: PolyExpr) -> Self {
        Self {
            kind,
            root,
            covered,
            leaves: expr.leaves(),
            expr,
            delta_layers: 0,
            delta_computations: 0,
            delta_bytes: 0,
        }
    }

    pub fn smallest_id(&self) -> NodeId {
        *self.covered.first().expect("candidates cover at least one node")
    }

    pub fn overlaps(&self, other: &Candidate) -> bool {
        self.covered.iter().any(|id| other.covered.contains(id))
    }

    /// The fused-node payload with leaves renumbered to input slots.
    pub fn block(&self, g: &Graph) -> Result<FusedBlock, FusionError> {
        let expr = self.expr.map_leaves(&|id| {
            self.leaves
                .iter()
                .position(|&l| l == id)
                .expect("leaves collected from expr")
        });
        let leaf_shapes = self
            .leaves
            .iter()
            .map(|&l| g.shape(l).cloned())
            .collect::<Result<_, _>>()?;
        Ok(FusedBlock {
            kind: self.kind,
            expr,
            leaf_shapes,
            covered: self.covered.iter().copied().collect(),
        })
    }
}

/// Expression tree of the polynomial region rooted at `root`, with shared
/// region values expanded, and the region's member set.
pub fn extract_poly(g: &Graph, root: NodeId) -> Result<(PolyExpr, BTreeSet<NodeId>), FusionError> {
    if !g.is_inferred() {
        return Err(FusionError::NotInferred);
    }
    if root >= g.len() || !g.node(root).kind().is_polynomial() {
        return Err(FusionError::NotPolynomial(root));
    }
    let members = region_of(g, &g.consumers(), root);
    Ok((build_expr(g, &members, root), members))
}

/// Tree over `members` in graph operand order; everything else is a leaf.
fn build_expr(g: &Graph, members: &BTreeSet<NodeId>, id: NodeId) -> PolyExpr {
    let node = g.node(id);
    if !members.contains(&id) {
        return PolyExpr::leaf(id, node.shape().clone());
    }
    let arg = |k: usize| build_expr(g, members, node.inputs[k]);
    match node.op {
        Op::Add => PolyExpr::add(vec![arg(0), arg(1)]),
        Op::Mul => PolyExpr::mul(vec![arg(0), arg(1)]),
        Op::MatMul => PolyExpr::matmul(arg(0), arg(1)),
        Op::Gelu => PolyExpr::gelu(arg(0)),
        _ => unreachable!("members are add, mul, matmul or gelu"),
    }
}

pub fn enumerate_candidates(g: &Graph) -> Result<Vec<Candidate>, FusionError> {
    if !g.is_inferred() {
        return Err(FusionError::NotInferred);
    }
    let mut out = Vec::new();
    for (root, members) in poly_regions(g)? {
        if members.len() < 2 {
            continue;
        }
        let expr = build_expr(g, &members, root);
        let factored = apply_distributive_factor(&expr);
        if factored.op_count() < expr.op_count() {
            out.push(Candidate::new(FusionKind::Algebraic, root, members, factored));
        }
    }
    out.extend(pointwise_clusters(g));

    let before = count_metrics(g)?;
    for cand in &mut out {
        let single = FusionPlan::for_graph(g, vec![cand.clone()]);
        let after = count_metrics(&rewrite_graph(g, &single)?)?;
        cand.delta_layers = before.layer_count as i64 - after.layer_count as i64;
        cand.delta_computations = before.computation_count as i64 - after.computation_count as i64;
        cand.delta_bytes = before.intermediate_bytes as i64 - after.intermediate_bytes as i64;
    }
    out.sort_by_key(|a| (a.root, a.kind));
    Ok(out)
}

/// Row-broadcast compatible with `domain`: equal, or a leading dim of 1.
fn fits_domain(shape: &TensorShape, domain: &TensorShape) -> bool {
    shape == domain
        || (shape.rank() == domain.rank()
            && shape.dims()[0] == 1
            && shape.dims()[1..] == domain.dims()[1..])
}

/// Maximal pointwise clusters: grown upward from a pointwise root through
/// single-use, non-output Add/Mul/Gelu producers. A single-use MatMul
/// producer joins as a terminal member, which makes the cluster an
/// epilogue. Clusters contained in a larger one are dropped.
fn pointwise_clusters(g: &Graph) -> Vec<Candidate> {
    let consumers = g.consumers();
    let absorbable = |id: NodeId, domain: &TensorShape| {
        let node = g.node(id);
        (node.kind().is_pointwise() || node.kind() == OpKind::MatMul)
            && consumers[id].len() == 1
            && !g.is_output(id)
            && fits_domain(node.shape(), domain)
    };

    let mut clusters: Vec<(NodeId, BTreeSet<NodeId>)> = Vec::new();
    for node in g.nodes() {
        if !node.kind().is_pointwise() {
            continue;
        }
        let domain = node.shape();
        let mut members = BTreeSet::from([node.id]);
        let mut stack = vec![node.id];
        while let Some(id) = stack.pop() {
            for &i in &g.node(id).inputs {
                if !members.contains(&i) && absorbable(i, domain) {
                    members.insert(i);
                    if g.node(i).kind().is_pointwise() {
                        stack.push(i);
                    }
                }
            }
        }
        if members.len() >= 2 {
            clusters.push((node.id, members));
        }
    }

    let mut out = Vec::new();
    for (k, (root, members)) in clusters.iter().enumerate() {
        let dominated = clusters
            .iter()
            .enumerate()
            .any(|(j, (_, other))| j != k && other.len() > members.len() && members.is_subset(other));
        if dominated || !cluster_is_legal(g, *root, members) {
            continue;
        }
        let has_matmul = members.iter().any(|&m| g.node(m).kind() == OpKind::MatMul);
        let kind = if has_matmul {
            FusionKind::Epilogue
        } else {
            FusionKind::Vertical
        };
        let expr = build_expr(g, members, *root);
        out.push(Candidate::new(kind, *root, members.clone(), expr));
    }
    out
}

/// Every member is produced in the root's loop nest and read there through
/// its broadcast access map.
fn cluster_is_legal(g: &Graph, root: NodeId, members: &BTreeSet<NodeId>) -> bool {
    let domain = g.node(root).shape();
    let mut deps = Vec::new();
    for &m in members {
        if m == root {
            continue;
        }
        let producer = g.node(m).shape();
        let Some(read) = AccessFunction::broadcast_read(producer, domain) else {
            return false;
        };
        deps.push(Dependence {
            producer: producer.clone(),
            consumer: domain.clone(),
            read,
        });
    }
    legality_check(&deps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::PolyOp;
    use crate::graph::{infer_shapes, parse_graph};

    fn graph(nodes: &str, outputs: &str) -> Graph {
        let text = format!(r#"{{"nodes": [{nodes}], "outputs": [{outputs}]}}"#);
        infer_shapes(parse_graph(&text).unwrap()).unwrap()
    }

    const INPUTS: &str = r#"
        {"id": 0, "op": "input", "attrs": {"shape": [4, 6]}},
        {"id": 1, "op": "input", "attrs": {"shape": [4, 6]}},
        {"id": 2, "op": "input", "attrs": {"shape": [4, 6]}},
        {"id": 3, "op": "input", "attrs": {"shape": [4, 6]}}"#;

    fn pattern3() -> Graph {
        graph(
            &format!(
                r#"{INPUTS},
                {{"id": 4, "op": "add", "inputs": [0, 1]}},
                {{"id": 5, "op": "mul", "inputs": [4, 2]}},
                {{"id": 6, "op": "mul", "inputs": [4, 3]}},
                {{"id": 7, "op": "add", "inputs": [5, 6]}}"#
            ),
            "7",
        )
    }

    #[test]
    fn pattern3_tree_shares_subtree() {
        let g = pattern3();
        let (e, members) = extract_poly(&g, 7).unwrap();
        assert_eq!(members, BTreeSet::from([4, 5, 6, 7]));
        let PolyOp::AddN(terms) = &e.op else { panic!() };
        let shared: Vec<&PolyExpr> = terms.iter().map(|t| t.children()[0]).collect();
        assert_eq!(shared[0], shared[1]);
        assert_eq!(e.op_count(), 5);
    }

    #[test]
    fn single_add_is_leaf_only() {
        let g = graph(&format!(r#"{INPUTS}, {{"id": 4, "op": "add", "inputs": [0, 1]}}"#), "4");
        let (e, _) = extract_poly(&g, 4).unwrap();
        assert_eq!(e.to_string(), "(%0 + %1)");
    }

    #[test]
    fn gelu_is_opaque_leaf() {
        let g = graph(
            &format!(
                r#"{INPUTS}, {{"id": 4, "op": "gelu", "inputs": [0]}},
                {{"id": 5, "op": "add", "inputs": [4, 1]}}"#
            ),
            "5",
        );
        let (e, _) = extract_poly(&g, 5).unwrap();
        assert_eq!(e.to_string(), "(%4 + %1)");
        assert_eq!(extract_poly(&g, 4).unwrap_err(), FusionError::NotPolynomial(4));
    }

    #[test]
    fn pattern3_algebraic_candidate() {
        let cands = enumerate_candidates(&pattern3()).unwrap();
        let alg: Vec<_> = cands.iter().filter(|c| c.kind == FusionKind::Algebraic).collect();
        assert_eq!(alg.len(), 1);
        assert_eq!((alg[0].delta_layers, alg[0].delta_computations), (3, 2));
        assert_eq!(alg[0].delta_bytes, 3 * 4 * 6 * 4);
    }

    #[test]
    fn add_gelu_add_chain_is_one_vertical() {
        let g = graph(
            &format!(
                r#"{INPUTS},
                {{"id": 4, "op": "add", "inputs": [0, 1]}},
                {{"id": 5, "op": "gelu", "inputs": [4]}},
                {{"id": 6, "op": "add", "inputs": [5, 2]}}"#
            ),
            "6",
        );
        let cands = enumerate_candidates(&g).unwrap();
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].kind, FusionKind::Vertical);
        assert_eq!(cands[0].covered, BTreeSet::from([4, 5, 6]));
        assert_eq!(cands[0].delta_layers, 2);
        assert_eq!(cands[0].delta_computations, 0);
    }

    #[test]
    fn lone_matmul_has_no_candidates() {
        let g = graph(&format!(r#"{INPUTS}, {{"id": 4, "op": "matmul", "inputs": [0, 1]}}"#).replace(
            r#"{"id": 1, "op": "input", "attrs": {"shape": [4, 6]}}"#,
            r#"{"id": 1, "op": "input", "attrs": {"shape": [6, 4]}}"#,
        ), "4");
        assert!(enumerate_candidates(&g).unwrap().is_empty());
    }

    #[test]
    fn matmul_with_bias_and_gelu_is_epilogue() {
        let g = graph(
            r#"{"id": 0, "op": "input", "attrs": {"shape": [4, 3]}},
               {"id": 1, "op": "input", "attrs": {"shape": [3, 5]}},
               {"id": 2, "op": "input", "attrs": {"shape": [1, 5]}},
               {"id": 3, "op": "matmul", "inputs": [0, 1]},
               {"id": 4, "op": "add", "inputs": [3, 2]},
               {"id": 5, "op": "gelu", "inputs": [4]}"#,
            "5",
        );
        let cands = enumerate_candidates(&g).unwrap();
        let epi: Vec<_> = cands.iter().filter(|c| c.kind == FusionKind::Epilogue).collect();
        assert_eq!(epi.len(), 1);
        assert_eq!(epi[0].covered, BTreeSet::from([3, 4, 5]));
        assert_eq!(epi[0].leaves, vec![0, 1, 2]);
        assert_eq!(epi[0].delta_layers, 2);
    }

    #[test]
    fn shared_producer_stops_growth() {
        let g = graph(
            &format!(
                r#"{INPUTS},
                {{"id": 4, "op": "add", "inputs": [0, 1]}},
                {{"id": 5, "op": "gelu", "inputs": [4]}},
                {{"id": 6, "op": "mul", "inputs": [4, 5]}}"#
            ),
            "6",
        );
        // 4 feeds both 5 and 6, so only gelu joins the mul.
        let cands = enumerate_candidates(&g).unwrap();
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].covered, BTreeSet::from([5, 6]));
    }
}
