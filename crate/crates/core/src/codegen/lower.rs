use super::access::{AccessFunction, IterationDomain};
use super::CodegenError;
use crate::fusion::{FusedBlock, PolyExpr, PolyOp};
use crate::graph::TensorShape;

/// Buffer read by a load: an input slot of the fused node, or a MatMul
/// result computed before the main nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Leaf(usize),
    Temp(usize),
}

/// Statement body of the main nest, evaluated once per domain point.
#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Load {
        operand: Operand,
        access: AccessFunction,
    },
    Add(Vec<Stmt>),
    Mul(Vec<Stmt>),
    Gelu(Box<Stmt>),
}

impl Stmt {
    /// 0: loop invariant, 1: depends on the column only, 2: depends on the row.
    pub fn level(&self) -> u8 {
        match self {
            Stmt::Load { access, .. } => {
                if access.coeffs[0] != 0 {
                    2
                } else if access.coeffs[1] != 0 {
                    1
                } else {
                    0
                }
            }
            Stmt::Add(c) | Stmt::Mul(c) => c.iter().map(Stmt::level).max().unwrap_or(0),
            Stmt::Gelu(a) => a.level(),
        }
    }
}

/// A fused block lowered to a 2-D nest. MatMul subtrees run first as
/// standalone triple loops into temporaries.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopNest {
    pub domain: IterationDomain,
    pub out_shape: TensorShape,
    pub leaf_shapes: Vec<TensorShape>,
    pub pre_stage: Vec<PolyExpr>,
    pub body: Stmt,
}

impl LoopNest {
    /// True when the whole block is one MatMul whose result is the output.
    pub fn is_plain_matmul(&self) -> bool {
        matches!(self.body, Stmt::Load { operand: Operand::Temp(0), .. }) && self.pre_stage.len() == 1
    }
}

/// Rank-1 shapes become one row.
fn as_matrix(shape: &TensorShape) -> Option<TensorShape> {
    match shape.dims() {
        [n] => Some(TensorShape::matrix(1, *n)),
        [m, n] => Some(TensorShape::matrix(*m, *n)),
        _ => None,
    }
}

pub fn lower_block(block: &FusedBlock) -> Result<LoopNest, CodegenError> {
    let out_shape = block.expr.shape.clone();
    let domain_shape = as_matrix(&out_shape).ok_or_else(|| {
        CodegenError::Unsupported(format!("rank-{} output {out_shape}", out_shape.rank()))
    })?;
    let mut pre_stage = Vec::new();
    let body = lower_expr(&block.expr, &domain_shape, block.expr.shape.rank(), &mut pre_stage)?;
    Ok(LoopNest {
        domain: IterationDomain {
            extents: domain_shape.dims().to_vec(),
        },
        out_shape,
        leaf_shapes: block.leaf_shapes.clone(),
        pre_stage,
        body,
    })
}

fn lower_expr(
    e: &PolyExpr,
    domain: &TensorShape,
    rank: usize,
    pre: &mut Vec<PolyExpr>,
) -> Result<Stmt, CodegenError> {
    let load = |operand: Operand, shape: &TensorShape| -> Result<Stmt, CodegenError> {
        let lifted = as_matrix(shape).filter(|_| shape.rank() == rank);
        let access = lifted
            .and_then(|s| AccessFunction::broadcast_read(&s, domain))
            .ok_or_else(|| {
                CodegenError::Unsupported(format!("operand {shape} in domain {domain}"))
            })?;
        Ok(Stmt::Load { operand, access })
    };
    let lower_all = |c: &[PolyExpr], pre: &mut Vec<PolyExpr>| -> Result<Vec<Stmt>, CodegenError> {
        c.iter().map(|x| lower_expr(x, domain, rank, pre)).collect()
    };
    match &e.op {
        PolyOp::Leaf(slot) => load(Operand::Leaf(*slot), &e.shape),
        PolyOp::MatMul(..) => {
            pre.push(e.clone());
            load(Operand::Temp(pre.len() - 1), &e.shape)
        }
        PolyOp::AddN(c) => Ok(Stmt::Add(lower_all(c, pre)?)),
        PolyOp::MulN(c) => Ok(Stmt::Mul(lower_all(c, pre)?)),
        PolyOp::Gelu(a) => Ok(Stmt::Gelu(Box::new(lower_expr(a, domain, rank, pre)?))),
    }
}
