use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::plan::FusionOutcome;
use super::FusionKind;
use crate::graph::{GraphMetrics, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub kind: FusionKind,
    pub root: NodeId,
    pub covered: BTreeSet<NodeId>,
    pub expression: String,
    pub delta_layers: i64,
    pub delta_computations: i64,
    pub delta_bytes: i64,
    pub selected: bool,
}

/// Deterministic summary of a fusion pass. Field order is the
/// serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub before: GraphMetrics,
    pub after: GraphMetrics,
    pub candidates: Vec<CandidateReport>,
    /// Indices into `candidates`, in acceptance order.
    pub plan: Vec<usize>,
}

pub fn fuse_report(outcome: &FusionOutcome) -> FuseReport {
    let plan: Vec<usize> = outcome
        .plan
        .accepted
        .iter()
        .map(|a| {
            outcome
                .candidates
                .iter()
                .position(|c| c == a)
                .expect("accepted candidates come from the candidate list")
        })
        .collect();
    let candidates = outcome
        .candidates
        .iter()
        .enumerate()
        .map(|(k, c)| CandidateReport {
            kind: c.kind,
            root: c.root,
            covered: c.covered.clone(),
            expression: c.expr.to_string(),
            delta_layers: c.delta_layers,
            delta_computations: c.delta_computations,
            delta_bytes: c.delta_bytes,
            selected: plan.contains(&k),
        })
        .collect();
    FuseReport {
        before: outcome.before,
        after: outcome.after,
        candidates,
        plan,
    }
}
