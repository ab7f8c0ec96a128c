use serde::{Deserialize, Serialize};

use super::NasError;
use crate::autotune::{measure_latency, LatencyConfig};
use crate::codegen::CompiledGraph;
use crate::fusion::fuse_graph;
use crate::graph::{build_transformer_graph, flops_estimate, infer_shapes, seeded_bindings, ArchSample, Graph};

/// What the compiler reports back for one architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub latency_ms: f64,
    pub fused_layer_count: usize,
    pub computation_count: u64,
}

/// Compiles an architecture and reports its latency and fused metrics.
pub trait CompilerFeedback {
    fn measure(&mut self, arch: &ArchSample) -> Result<Feedback, NasError>;
}

impl<T: CompilerFeedback + ?Sized> CompilerFeedback for &mut T {
    fn measure(&mut self, arch: &ArchSample) -> Result<Feedback, NasError> {
        (**self).measure(arch)
    }
}

fn fused_encoder(arch: &ArchSample, seq_len: usize) -> Result<(Graph, Feedback), NasError> {
    let g = infer_shapes(build_transformer_graph(arch, seq_len)?)?;
    let outcome = fuse_graph(&g)?;
    let fb = Feedback {
        latency_ms: 0.0,
        fused_layer_count: outcome.after.layer_count,
        computation_count: outcome.after.computation_count,
    };
    Ok((outcome.graph, fb))
}

/// Latency modelled as `intercept_ms + ms_per_gflop * GFLOPs`; fused
/// metrics still come from the real fusion pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFeedback {
    pub intercept_ms: f64,
    pub ms_per_gflop: f64,
    pub seq_len: usize,
}

impl SyntheticFeedback {
    pub fn latency_ms(&self, arch: &ArchSample) -> f64 {
        self.intercept_ms + self.ms_per_gflop * flops_estimate(arch, self.seq_len) as f64 / 1e9
    }
}

impl CompilerFeedback for SyntheticFeedback {
    fn measure(&mut self, arch: &ArchSample) -> Result<Feedback, NasError> {
        let (_, fb) = fused_encoder(arch, self.seq_len)?;
        Ok(Feedback {
            latency_ms: self.latency_ms(arch),
            ..fb
        })
    }
}

/// Builds, fuses and compiles the encoder, then times it on seeded random
/// weights and activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredFeedback {
    pub seq_len: usize,
    pub latency: LatencyConfig,
    pub seed: u64,
}

impl CompilerFeedback for MeasuredFeedback {
    fn measure(&mut self, arch: &ArchSample) -> Result<Feedback, NasError> {
        let (graph, fb) = fused_encoder(arch, self.seq_len)?;
        let compiled = CompiledGraph::compile(&graph)?;
        let bindings = seeded_bindings(&graph, self.seed)?;
        let stats = measure_latency(&self.latency, || compiled.execute(&bindings).map(drop))?;
        Ok(Feedback {
            latency_ms: stats.median_ms,
            ..fb
        })
    }
}
