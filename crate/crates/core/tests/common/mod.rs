#![allow(dead_code)]

pub mod legality;

use fusekit_core::graph::{Bindings, Node, NodeId, Op, Outputs};
use fusekit_core::{infer_shapes, Graph, Tensor, TensorShape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq)]
enum Pool {
    Main,
    Row,
    Aux,
}

struct Builder {
    nodes: Vec<Node>,
    pools: Vec<(NodeId, Pool)>,
}

impl Builder {
    fn push(&mut self, op: Op, inputs: Vec<NodeId>, pool: Pool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            op,
            inputs,
            shape: None,
        });
        self.pools.push((id, pool));
        id
    }

    /// Picks from the pool, biased toward recent nodes.
    fn pick(&self, rng: &mut ChaCha8Rng, pool: Pool) -> Option<NodeId> {
        let ids: Vec<NodeId> = self.pools.iter().filter(|(_, p)| *p == pool).map(|(id, _)| *id).collect();
        if ids.is_empty() {
            return None;
        }
        if rng.gen_bool(0.6) {
            let tail = ids.len().min(3);
            Some(ids[ids.len() - 1 - rng.gen_range(0..tail)])
        } else {
            ids.choose(rng).copied()
        }
    }
}

/// A random inferred graph with at most `max_nodes` nodes. Activations are
/// `m x n` (`m, n <= max_dim`) with `1 x n` broadcast rows; MatMuls
/// contract over `k <= 8`.
pub fn random_graph(seed: u64, max_nodes: usize, max_dim: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=max_dim);
    let n = rng.gen_range(1..=max_dim);
    let k = rng.gen_range(1..=8);
    let mut b = Builder {
        nodes: Vec::new(),
        pools: Vec::new(),
    };
    let input = |r, c| Op::Input {
        shape: TensorShape::matrix(r, c),
    };
    b.push(input(m, n), vec![], Pool::Main);
    if rng.gen_bool(0.7) {
        b.push(input(m, n), vec![], Pool::Main);
    }
    if rng.gen_bool(0.5) {
        b.push(input(1, n), vec![], Pool::Row);
    }
    let weight = if rng.gen_bool(0.4) {
        b.push(input(m, k), vec![], Pool::Aux);
        let w = b.nodes.len();
        b.nodes.push(Node {
            id: w,
            op: input(k, n),
            inputs: vec![],
            shape: None,
        });
        Some(w)
    } else {
        None
    };
    let target = rng.gen_range(b.nodes.len() + 1..=max_nodes.max(b.nodes.len() + 1));
    while b.nodes.len() < target {
        let roll = rng.gen_range(0..100);
        if roll < 55 {
            let op = if rng.gen_bool(0.5) { Op::Add } else { Op::Mul };
            let pool = [Pool::Main, Pool::Main, Pool::Main, Pool::Row, Pool::Aux]
                .choose(&mut rng)
                .copied()
                .unwrap();
            let Some(lhs) = b.pick(&mut rng, pool) else { continue };
            let rhs_pool = if pool == Pool::Main && rng.gen_bool(0.25) { Pool::Row } else { pool };
            let Some(rhs) = b.pick(&mut rng, rhs_pool) else { continue };
            let inputs = if rng.gen_bool(0.5) { vec![lhs, rhs] } else { vec![rhs, lhs] };
            b.push(op, inputs, pool);
        } else if roll < 72 {
            let pool = if rng.gen_bool(0.8) { Pool::Main } else { Pool::Row };
            let Some(x) = b.pick(&mut rng, pool) else { continue };
            b.push(Op::Gelu, vec![x], pool);
        } else if roll < 88 {
            let (Some(w), Some(a)) = (weight, b.pick(&mut rng, Pool::Aux)) else { continue };
            b.push(Op::MatMul, vec![a, w], Pool::Main);
        } else {
            let Some(x) = b.pick(&mut rng, Pool::Main) else { continue };
            let op = if rng.gen_bool(0.5) { Op::Softmax } else { Op::LayerNorm };
            b.push(op, vec![x], Pool::Main);
        }
    }
    let mut consumed = vec![false; b.nodes.len()];
    for node in &b.nodes {
        for &i in &node.inputs {
            consumed[i] = true;
        }
    }
    let mut outputs: Vec<NodeId> = (0..b.nodes.len()).filter(|&i| !consumed[i]).collect();
    let interior: Vec<NodeId> = (0..b.nodes.len())
        .filter(|&i| consumed[i] && !b.nodes[i].inputs.is_empty())
        .collect();
    if !interior.is_empty() && rng.gen_bool(0.2) {
        outputs.push(*interior.choose(&mut rng).unwrap());
    }
    infer_shapes(Graph::new(b.nodes, outputs).expect("generator builds valid graphs"))
        .expect("generator builds well-shaped graphs")
}

pub fn random_bindings(g: &Graph, seed: u64) -> Bindings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.input_ids()
        .into_iter()
        .map(|id| (id, Tensor::random(g.shape(id).unwrap().clone(), &mut rng)))
        .collect()
}

/// Largest `|got - want| / (1 + |want|)` over all elements.
pub fn max_rel_error(got: &Tensor, want: &Tensor) -> f64 {
    assert_eq!(got.shape(), want.shape());
    got.data()
        .iter()
        .zip(want.data())
        .map(|(&a, &b)| ((a as f64 - b as f64).abs()) / (1.0 + (b as f64).abs()))
        .fold(0.0, f64::max)
}

/// Compares outputs by position; fused graphs renumber their nodes.
pub fn outputs_max_error(g_ref: &Graph, want: &Outputs, g_got: &Graph, got: &Outputs) -> f64 {
    g_ref
        .outputs()
        .iter()
        .zip(g_got.outputs())
        .map(|(r, f)| max_rel_error(&got[f], &want[r]))
        .fold(0.0, f64::max)
}

/// Shared-sum pattern `(X + F) * G + (X + F) * H`.
pub fn pattern3(m: usize, n: usize) -> Graph {
    let text = format!(
        r#"{{"nodes": [
            {{"id": 0, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 1, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 2, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 3, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 4, "op": "add", "inputs": [0, 1]}},
            {{"id": 5, "op": "mul", "inputs": [4, 2]}},
            {{"id": 6, "op": "mul", "inputs": [4, 3]}},
            {{"id": 7, "op": "add", "inputs": [5, 6]}}], "outputs": [7]}}"#
    );
    infer_shapes(fusekit_core::parse_graph(&text).unwrap()).unwrap()
}

/// `out = in0 * in1 + in2 * in3` with `in2`, `in3` broadcast rows.
pub fn fuse_add_graph(m: usize, n: usize) -> Graph {
    let text = format!(
        r#"{{"nodes": [
            {{"id": 0, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 1, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 2, "op": "input", "attrs": {{"shape": [1, {n}]}}}},
            {{"id": 3, "op": "input", "attrs": {{"shape": [1, {n}]}}}},
            {{"id": 4, "op": "mul", "inputs": [0, 1]}},
            {{"id": 5, "op": "mul", "inputs": [2, 3]}},
            {{"id": 6, "op": "add", "inputs": [4, 5]}}], "outputs": [6]}}"#
    );
    infer_shapes(fusekit_core::parse_graph(&text).unwrap()).unwrap()
}

/// Eight elementwise ops alternating Add and Mul with Gelu, all `m x n`.
pub fn elementwise_chain(m: usize, n: usize) -> Graph {
    let mut nodes = vec![
        format!(r#"{{"id": 0, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}}"#),
        format!(r#"{{"id": 1, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}}"#),
    ];
    let ops = ["add", "gelu", "mul", "add", "gelu", "mul", "add", "gelu"];
    let mut prev = 0;
    for (k, op) in ops.iter().enumerate() {
        let id = k + 2;
        let inputs = if *op == "gelu" { format!("[{prev}]") } else { format!("[{prev}, 1]") };
        nodes.push(format!(r#"{{"id": {id}, "op": "{op}", "inputs": {inputs}}}"#));
        prev = id;
    }
    let text = format!(r#"{{"nodes": [{}], "outputs": [{prev}]}}"#, nodes.join(","));
    infer_shapes(fusekit_core::parse_graph(&text).unwrap()).unwrap()
}

/// Search landscape with a known optimum: accuracy peaks at the middle
/// architecture and the budget admits it with a hair of slack.
pub struct Planted {
    pub space: fusekit_core::nas::SearchSpace,
    pub target: fusekit_core::ArchSample,
    pub trainer: fusekit_core::nas::PeakedTrainer,
    pub feedback: fusekit_core::nas::SyntheticFeedback,
}

pub fn planted() -> Planted {
    use fusekit_core::nas::{PeakedTrainer, SearchSpace, SyntheticFeedback};
    let mut space = SearchSpace {
        layer_choices: vec![2, 4, 6, 8],
        hidden_choices: vec![128, 256, 384, 512],
        ffn_choices: vec![512, 1024, 1536, 2048],
        latency_budget_ms: 0.0,
        seq_len: 128,
    };
    let target = space.arch(&[2, 2, 2]);
    let feedback = SyntheticFeedback {
        intercept_ms: 20.0,
        ms_per_gflop: 1.0,
        seq_len: 128,
    };
    space.latency_budget_ms = feedback.latency_ms(&target) * 1.001;
    let trainer = PeakedTrainer {
        target,
        peak: 0.95,
        slope: 1.0,
    };
    Planted {
        space,
        target,
        trainer,
        feedback,
    }
}

/// Bindings for a rewritten graph, matching inputs by position.
pub fn rebind(g: &Graph, fused: &Graph, bindings: &Bindings) -> Bindings {
    fused
        .input_ids()
        .into_iter()
        .zip(g.input_ids())
        .map(|(f, r)| (f, bindings[&r].clone()))
        .collect()
}
