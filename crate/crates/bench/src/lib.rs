//! Benchmark workloads shared by the criterion targets.

use fusekit_core::graph::{seeded_bindings, Bindings};
use fusekit_core::{fuse_graph, infer_shapes, parse_graph, CompiledGraph, Graph};

/// Elementwise chain `gelu(add(mul(gelu(add(...)), y), y))` of eight ops
/// over two `m x n` inputs.
pub fn chain(m: usize, n: usize) -> Graph {
    let mut nodes = vec![
        format!(r#"{{"id": 0, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}}"#),
        format!(r#"{{"id": 1, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}}"#),
    ];
    let mut prev = 0;
    for (k, op) in ["add", "gelu", "mul", "add", "gelu", "mul", "add", "gelu"].iter().enumerate() {
        let id = k + 2;
        let inputs = if *op == "gelu" { format!("[{prev}]") } else { format!("[{prev}, 1]") };
        nodes.push(format!(r#"{{"id": {id}, "op": "{op}", "inputs": {inputs}}}"#));
        prev = id;
    }
    build(&format!(r#"{{"nodes": [{}], "outputs": [{prev}]}}"#, nodes.join(",")))
}

/// `(a + b) * c + (a + b) * d`, which factors to `(a + b) * (c + d)`.
pub fn shared_sum(m: usize, n: usize) -> Graph {
    build(&format!(
        r#"{{"nodes": [
            {{"id": 0, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 1, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 2, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 3, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 4, "op": "add", "inputs": [0, 1]}},
            {{"id": 5, "op": "mul", "inputs": [4, 2]}},
            {{"id": 6, "op": "mul", "inputs": [4, 3]}},
            {{"id": 7, "op": "add", "inputs": [5, 6]}}], "outputs": [7]}}"#
    ))
}

/// `a * b + c * d` with `c` and `d` broadcast rows.
pub fn fuse_add(m: usize, n: usize) -> Graph {
    build(&format!(
        r#"{{"nodes": [
            {{"id": 0, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 1, "op": "input", "attrs": {{"shape": [{m}, {n}]}}}},
            {{"id": 2, "op": "input", "attrs": {{"shape": [1, {n}]}}}},
            {{"id": 3, "op": "input", "attrs": {{"shape": [1, {n}]}}}},
            {{"id": 4, "op": "mul", "inputs": [0, 1]}},
            {{"id": 5, "op": "mul", "inputs": [2, 3]}},
            {{"id": 6, "op": "add", "inputs": [4, 5]}}], "outputs": [6]}}"#
    ))
}

fn build(text: &str) -> Graph {
    infer_shapes(parse_graph(text).expect("workload parses")).expect("workload shapes")
}

/// A graph lowered both ways, with matching inputs.
pub struct Pair {
    pub unfused: CompiledGraph,
    pub unfused_inputs: Bindings,
    pub fused: CompiledGraph,
    pub fused_inputs: Bindings,
}

pub fn lower(g: &Graph, seed: u64) -> Pair {
    let fused = fuse_graph(g).expect("fusion").graph;
    let unfused_inputs = seeded_bindings(g, seed).expect("bindings");
    let fused_inputs = fused
        .input_ids()
        .into_iter()
        .zip(g.input_ids())
        .map(|(f, o)| (f, unfused_inputs[&o].clone()))
        .collect();
    Pair {
        unfused: CompiledGraph::compile(g).expect("lowering"),
        unfused_inputs,
        fused: CompiledGraph::compile(&fused).expect("lowering"),
        fused_inputs,
    }
}
