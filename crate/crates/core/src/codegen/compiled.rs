use std::borrow::Cow;
use std::collections::BTreeMap;

use super::exec::{execute_program, Program};
use super::lower::{lower_block, LoopNest};
use super::schedule::{estimate_locality, gen_variants, ScheduleVariant, DEFAULT_LAMBDA};
use super::CodegenError;
use crate::graph::{eval_node, Bindings, Graph, NodeId, Op, Outputs, Tensor};

/// A lowered fused block with its candidate schedules and the one in use.
#[derive(Debug, Clone)]
pub struct BlockKernel {
    pub nest: LoopNest,
    pub variants: Vec<ScheduleVariant>,
    pub selected: ScheduleVariant,
    program: Program,
}

/// An inferred graph ready to run: fused nodes execute their scheduled loop
/// nests (or fall back to per-op evaluation when lowering is unsupported),
/// everything else runs the reference kernels. Intermediates are released
/// after their last use.
#[derive(Debug, Clone)]
pub struct CompiledGraph {
    graph: Graph,
    order: Vec<NodeId>,
    uses: Vec<usize>,
    kernels: BTreeMap<NodeId, BlockKernel>,
    fallbacks: Vec<NodeId>,
}

impl CompiledGraph {
    /// Lowers every fused node and picks the variant with the lowest
    /// locality estimate as the initial schedule.
    pub fn compile(g: &Graph) -> Result<Self, CodegenError> {
        if !g.is_inferred() {
            return Err(CodegenError::NotInferred);
        }
        let order = g.topo_order()?;
        let mut uses = vec![0; g.len()];
        for node in g.nodes() {
            for &i in &node.inputs {
                uses[i] += 1;
            }
        }
        let mut kernels = BTreeMap::new();
        let mut fallbacks = Vec::new();
        for node in g.nodes() {
            let Some(block) = node.fused() else { continue };
            match lower_block(block) {
                Ok(nest) => {
                    let variants = gen_variants(&nest);
                    let selected = *variants
                        .iter()
                        .min_by(|a, b| {
                            estimate_locality(&nest, a, DEFAULT_LAMBDA)
                                .total_cmp(&estimate_locality(&nest, b, DEFAULT_LAMBDA))
                        })
                        .expect("at least one variant");
                    let program = Program::compile(&nest.body);
                    kernels.insert(
                        node.id,
                        BlockKernel {
                            nest,
                            variants,
                            selected,
                            program,
                        },
                    );
                }
                Err(e) => {
                    log::info!("node {}: per-op fallback ({e})", node.id);
                    fallbacks.push(node.id);
                }
            }
        }
        Ok(Self {
            graph: g.clone(),
            order,
            uses,
            kernels,
            fallbacks,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Fused nodes with a loop nest, in id order.
    pub fn blocks(&self) -> Vec<NodeId> {
        self.kernels.keys().copied().collect()
    }

    pub fn kernel(&self, id: NodeId) -> Option<&BlockKernel> {
        self.kernels.get(&id)
    }

    /// Fused nodes evaluated operator by operator.
    pub fn fallbacks(&self) -> &[NodeId] {
        &self.fallbacks
    }

    pub fn set_variant(&mut self, id: NodeId, v: ScheduleVariant) -> Result<(), CodegenError> {
        let k = self.kernels.get_mut(&id).ok_or(CodegenError::NoKernel(id))?;
        k.selected = v;
        Ok(())
    }

    pub fn assignment(&self) -> BTreeMap<NodeId, ScheduleVariant> {
        self.kernels.iter().map(|(&id, k)| (id, k.selected)).collect()
    }

    pub fn execute(&self, bindings: &Bindings) -> Result<Outputs, CodegenError> {
        crate::graph::check_bindings(&self.graph, bindings)?;
        let g = &self.graph;
        let mut remaining = self.uses.clone();
        for &o in g.outputs() {
            remaining[o] += 1;
        }
        let mut values: Vec<Option<Cow<'_, Tensor>>> = vec![None; g.len()];
        for &id in &self.order {
            let node = g.node(id);
            let value = {
                let inputs: Vec<&Tensor> = node
                    .inputs
                    .iter()
                    .map(|&i| values[i].as_deref().expect("topological order"))
                    .collect();
                match &node.op {
                    Op::Input { .. } => Cow::Borrowed(&bindings[&id]),
                    Op::Fused(block) => Cow::Owned(match self.kernels.get(&id) {
                        Some(k) => execute_program(&k.nest, &k.program, &k.selected, &inputs)?,
                        None => block.expr.evaluate(&|slot| inputs[slot].clone()),
                    }),
                    _ => Cow::Owned(eval_node(g, id, &inputs)?),
                }
            };
            for &i in &node.inputs {
                remaining[i] -= 1;
                if remaining[i] == 0 {
                    values[i] = None;
                }
            }
            values[id] = Some(value);
        }
        Ok(g.outputs()
            .iter()
            .map(|&o| (o, values[o].clone().expect("outputs kept").into_owned()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fusion::fuse_graph;
    use crate::graph::{infer_shapes, parse_graph, reference_execute, TensorShape};

    fn bindings(g: &Graph, seed: u64) -> Bindings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.input_ids()
            .into_iter()
            .map(|id| (id, Tensor::random(g.shape(id).unwrap().clone(), &mut rng)))
            .collect()
    }

    #[test]
    fn fused_chain_matches_reference_bitwise() {
        let text = r#"{"nodes": [
            {"id": 0, "op": "input", "attrs": {"shape": [5, 7]}},
            {"id": 1, "op": "input", "attrs": {"shape": [1, 7]}},
            {"id": 2, "op": "add", "inputs": [0, 1]},
            {"id": 3, "op": "gelu", "inputs": [2]},
            {"id": 4, "op": "mul", "inputs": [3, 0]},
            {"id": 5, "op": "softmax", "inputs": [4]}], "outputs": [5, 3]}"#;
        let g = infer_shapes(parse_graph(text).unwrap()).unwrap();
        let fused = fuse_graph(&g).unwrap().graph;
        let compiled = CompiledGraph::compile(&fused).unwrap();
        let b = bindings(&g, 1);
        let want = reference_execute(&g, &b).unwrap();
        let got = compiled.execute(&b).unwrap();
        let want: Vec<&Tensor> = want.values().collect();
        let got: Vec<&Tensor> = got.values().collect();
        assert_eq!(want, got);
    }

    #[test]
    fn rank3_block_falls_back() {
        let text = r#"{"nodes": [
            {"id": 0, "op": "input", "attrs": {"shape": [2, 3, 4]}},
            {"id": 1, "op": "input", "attrs": {"shape": [2, 3, 4]}},
            {"id": 2, "op": "add", "inputs": [0, 1]},
            {"id": 3, "op": "gelu", "inputs": [2]}], "outputs": [3]}"#;
        let g = infer_shapes(parse_graph(text).unwrap()).unwrap();
        let fused = fuse_graph(&g).unwrap().graph;
        let compiled = CompiledGraph::compile(&fused).unwrap();
        assert_eq!(compiled.fallbacks(), &[2]);
        let b = bindings(&g, 2);
        assert_eq!(
            compiled.execute(&b).unwrap()[&2],
            reference_execute(&g, &b).unwrap()[&3]
        );
        assert_eq!(compiled.blocks(), Vec::<NodeId>::new());
        let _ = TensorShape::matrix(1, 1);
    }
}
