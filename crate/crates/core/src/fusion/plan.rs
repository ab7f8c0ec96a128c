use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use serde::Serialize;

use super::candidates::{enumerate_candidates, Candidate};
use super::FusionError;
use crate::graph::{count_metrics, infer_shapes, Graph, GraphMetrics, Node, NodeId, Op};

/// Accepted candidates, pairwise disjoint, bound to the graph they were
/// enumerated on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionPlan {
    pub fingerprint: u64,
    pub accepted: Vec<Candidate>,
}

impl FusionPlan {
    pub fn empty(g: &Graph) -> Self {
        Self::for_graph(g, Vec::new())
    }

    pub fn for_graph(g: &Graph, accepted: Vec<Candidate>) -> Self {
        Self {
            fingerprint: graph_fingerprint(g),
            accepted,
        }
    }

    pub fn total_delta_computations(&self) -> i64 {
        self.accepted.iter().map(|c| c.delta_computations).sum()
    }

    pub fn total_delta_layers(&self) -> i64 {
        self.accepted.iter().map(|c| c.delta_layers).sum()
    }
}

/// Structural hash of kinds, edges, attributes, shapes and outputs.
pub fn graph_fingerprint(g: &Graph) -> u64 {
    let mut h = DefaultHasher::new();
    for node in g.nodes() {
        node.kind().hash(&mut h);
        node.inputs.hash(&mut h);
        node.shape.hash(&mut h);
        match &node.op {
            Op::Input { shape } | Op::Reshape { target: shape } => shape.hash(&mut h),
            Op::Transpose { perm } => perm.hash(&mut h),
            Op::Const { value } => {
                value.shape().hash(&mut h);
                value.data().iter().for_each(|v| v.to_bits().hash(&mut h));
            }
            Op::Fused(block) => {
                block.expr.hash(&mut h);
                block.covered.hash(&mut h);
            }
            _ => {}
        }
    }
    g.outputs().hash(&mut h);
    h.finish()
}

/// Greedy selection: most computations saved first, then most layers
/// saved, then the smallest covered id. Overlapping candidates are skipped.
pub fn select_plan(g: &Graph, candidates: &[Candidate]) -> FusionPlan {
    let mut order: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| c.delta_layers > 0 || c.delta_computations > 0)
        .collect();
    order.sort_by(|a, b| {
        b.delta_computations
            .cmp(&a.delta_computations)
            .then(b.delta_layers.cmp(&a.delta_layers))
            .then(a.smallest_id().cmp(&b.smallest_id()))
    });
    let mut taken: BTreeSet<NodeId> = BTreeSet::new();
    let mut accepted = Vec::new();
    for cand in order {
        if cand.covered.iter().any(|id| taken.contains(id)) {
            continue;
        }
        taken.extend(cand.covered.iter().copied());
        accepted.push(cand.clone());
    }
    FusionPlan::for_graph(g, accepted)
}

/// Replaces each accepted candidate by one fused node at the position of
/// its root; remaining nodes keep their relative order and are renumbered
/// densely.
pub fn rewrite_graph(g: &Graph, plan: &FusionPlan) -> Result<Graph, FusionError> {
    if plan.fingerprint != graph_fingerprint(g) {
        return Err(FusionError::StalePlan("graph fingerprint differs".into()));
    }
    let mut owner: Vec<Option<usize>> = vec![None; g.len()];
    for (k, cand) in plan.accepted.iter().enumerate() {
        if !cand.covered.contains(&cand.root) {
            return Err(FusionError::StalePlan(format!(
                "root {} outside its covered set",
                cand.root
            )));
        }
        for &id in &cand.covered {
            if id >= g.len() {
                return Err(FusionError::StalePlan(format!("node {id} does not exist")));
            }
            if owner[id].replace(k).is_some() {
                return Err(FusionError::StalePlan(format!("node {id} covered twice")));
            }
        }
    }
    let consumers = g.consumers();
    for cand in &plan.accepted {
        for &id in &cand.covered {
            if id != cand.root
                && (g.is_output(id) || consumers[id].iter().any(|c| !cand.covered.contains(c)))
            {
                return Err(FusionError::StalePlan(format!(
                    "node {id} escapes its fused block"
                )));
            }
        }
    }

    let mut new_id: Vec<Option<NodeId>> = vec![None; g.len()];
    let mut next = 0;
    for node in g.nodes() {
        let keep = match owner[node.id] {
            Some(k) => plan.accepted[k].root == node.id,
            None => true,
        };
        if keep {
            new_id[node.id] = Some(next);
            next += 1;
        }
    }
    let remap = |id: NodeId| new_id[id].expect("kept nodes only reference kept nodes");

    let mut nodes = Vec::with_capacity(next);
    for node in g.nodes() {
        let Some(id) = new_id[node.id] else { continue };
        let (op, inputs) = match owner[node.id] {
            Some(k) => {
                let cand = &plan.accepted[k];
                let block = cand.block(g)?;
                (Op::Fused(Box::new(block)), cand.leaves.iter().map(|&l| remap(l)).collect())
            }
            None => (node.op.clone(), node.inputs.iter().map(|&i| remap(i)).collect()),
        };
        nodes.push(Node {
            id,
            op,
            inputs,
            shape: None,
        });
    }
    let outputs = g.outputs().iter().map(|&o| remap(o)).collect();
    Ok(infer_shapes(Graph::new(nodes, outputs)?)?)
}

/// Result of the whole fusion pass on one graph.
#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub graph: Graph,
    pub candidates: Vec<Candidate>,
    pub plan: FusionPlan,
    pub before: GraphMetrics,
    pub after: GraphMetrics,
}

/// Enumerates, selects and rewrites. `g` must have inferred shapes.
pub fn fuse_graph(g: &Graph) -> Result<FusionOutcome, FusionError> {
    let candidates = enumerate_candidates(g)?;
    let plan = select_plan(g, &candidates);
    let graph = rewrite_graph(g, &plan)?;
    let before = count_metrics(g)?;
    let after = count_metrics(&graph)?;
    log::debug!(
        "fusion: {} candidates, {} accepted, layers {} -> {}, computations {} -> {}",
        candidates.len(),
        plan.accepted.len(),
        before.layer_count,
        after.layer_count,
        before.computation_count,
        after.computation_count
    );
    Ok(FusionOutcome {
        graph,
        candidates,
        plan,
        before,
        after,
    })
}
