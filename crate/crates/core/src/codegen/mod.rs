//! Loop-nest code generation for fused blocks.
//!
//! A fused block is lowered to a 2-D iteration domain with affine reads
//! ([`lower_block`]), its candidate schedules are enumerated with their
//! redundancy and stride profiles ([`gen_variants`]), and a schedule is run
//! by the strip-mined interpreter ([`execute_schedule`]). [`CompiledGraph`]
//! ties this together for whole graphs.

mod access;
mod compiled;
mod exec;
mod legality;
mod lower;
mod schedule;

use thiserror::Error;

use crate::graph::{GraphError, NodeId, TensorShape};

pub use access::{AccessFunction, Dependence, IterationDomain};
pub use compiled::{BlockKernel, CompiledGraph};
pub use exec::{execute_schedule, STRIP};
pub use legality::legality_check;
pub use lower::{lower_block, LoopNest, Operand, Stmt};
pub use schedule::{
    dump_variant, estimate_locality, gen_variants, redundancy_profile, LoopOrder,
    RedundancyProfile, ScheduleVariant, DEFAULT_LAMBDA, UNROLL_FACTORS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodegenError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph shapes have not been inferred")]
    NotInferred,
    #[error("lowering unsupported: {0}")]
    Unsupported(String),
    #[error("block expects {expected} operands, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("operand {slot}: expected shape {expected}, found {found}")]
    OperandShape {
        slot: usize,
        expected: TensorShape,
        found: TensorShape,
    },
    #[error("node {0} has no loop nest")]
    NoKernel(NodeId),
}
