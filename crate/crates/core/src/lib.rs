//! Algebraic layer fusion, loop-nest code generation, schedule auto-tuning
//! and latency-aware architecture search for small tensor graphs.

pub mod autotune;
pub mod codegen;
pub mod fusion;
pub mod graph;
pub mod nas;

pub use codegen::{CompiledGraph, ScheduleVariant};
pub use fusion::{fuse_graph, FusedBlock, FusionPlan};
pub use graph::{
    infer_shapes, parse_graph, reference_execute, ArchSample, Graph, GraphError, GraphMetrics,
    Tensor, TensorShape,
};
