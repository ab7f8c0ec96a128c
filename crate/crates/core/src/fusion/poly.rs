//! Polynomial expression trees over tensor symbols.

use std::collections::BTreeMap;
use std::fmt;

use crate::graph::tensor::{self as tensor_ops, Binary};
use crate::graph::{broadcast_shapes, Tensor, TensorShape};

/// Expression node. Variant order is the canonical operator tag order;
/// the derived `Ord` compares the tag, then children (or the leaf symbol).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolyOp {
    Leaf(usize),
    AddN(Vec<PolyExpr>),
    MulN(Vec<PolyExpr>),
    MatMul(Box<PolyExpr>, Box<PolyExpr>),
    Gelu(Box<PolyExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolyExpr {
    pub op: PolyOp,
    pub shape: TensorShape,
}

impl PolyExpr {
    pub fn leaf(symbol: usize, shape: TensorShape) -> Self {
        Self {
            op: PolyOp::Leaf(symbol),
            shape,
        }
    }

    /// N-ary elementwise sum. Panics on fewer than two children or
    /// incompatible shapes.
    pub fn add(children: Vec<PolyExpr>) -> Self {
        let shape = Self::elementwise_shape(&children);
        Self {
            op: PolyOp::AddN(children),
            shape,
        }
    }

    /// N-ary elementwise product; same contract as [`PolyExpr::add`].
    pub fn mul(children: Vec<PolyExpr>) -> Self {
        let shape = Self::elementwise_shape(&children);
        Self {
            op: PolyOp::MulN(children),
            shape,
        }
    }

    pub fn matmul(lhs: PolyExpr, rhs: PolyExpr) -> Self {
        let (a, b) = (lhs.shape.dims(), rhs.shape.dims());
        assert!(
            a.len() == 2 && b.len() == 2 && a[1] == b[0],
            "matmul of {} and {}",
            lhs.shape,
            rhs.shape
        );
        let shape = TensorShape::matrix(a[0], b[1]);
        Self {
            op: PolyOp::MatMul(Box::new(lhs), Box::new(rhs)),
            shape,
        }
    }

    pub fn gelu(child: PolyExpr) -> Self {
        let shape = child.shape.clone();
        Self {
            op: PolyOp::Gelu(Box::new(child)),
            shape,
        }
    }

    fn elementwise_shape(children: &[PolyExpr]) -> TensorShape {
        assert!(children.len() >= 2, "n-ary op needs at least two children");
        children[1..].iter().fold(children[0].shape.clone(), |acc, c| {
            broadcast_shapes(&acc, &c.shape)
                .unwrap_or_else(|| panic!("incompatible shapes {acc} and {}", c.shape))
        })
    }

    pub fn children(&self) -> Vec<&PolyExpr> {
        match &self.op {
            PolyOp::Leaf(_) => vec![],
            PolyOp::AddN(c) | PolyOp::MulN(c) => c.iter().collect(),
            PolyOp::MatMul(a, b) => vec![a, b],
            PolyOp::Gelu(a) => vec![a],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.op, PolyOp::Leaf(_))
    }

    /// Operator applications: `k - 1` for an n-ary node with `k` children,
    /// one for MatMul and Gelu.
    pub fn op_count(&self) -> u64 {
        let own = match &self.op {
            PolyOp::Leaf(_) => 0,
            PolyOp::AddN(c) | PolyOp::MulN(c) => c.len() as u64 - 1,
            PolyOp::MatMul(..) | PolyOp::Gelu(_) => 1,
        };
        own + self.children().iter().map(|c| c.op_count()).sum::<u64>()
    }

    /// Flops with the conventions of `graph_flops`.
    pub fn flops(&self) -> u64 {
        let own = match &self.op {
            PolyOp::Leaf(_) => 0,
            PolyOp::AddN(c) | PolyOp::MulN(c) => (c.len() as u64 - 1) * self.shape.numel() as u64,
            PolyOp::MatMul(a, _) => crate::graph::matmul_flops(
                a.shape.dims()[0],
                a.shape.dims()[1],
                self.shape.dims()[1],
            ),
            PolyOp::Gelu(_) => self.shape.numel() as u64,
        };
        own + self.children().iter().map(|c| c.flops()).sum::<u64>()
    }

    pub fn contains_matmul(&self) -> bool {
        matches!(self.op, PolyOp::MatMul(..)) || self.children().iter().any(|c| c.contains_matmul())
    }

    /// Leaf symbols in first-occurrence order.
    pub fn leaves(&self) -> Vec<usize> {
        fn walk(e: &PolyExpr, out: &mut Vec<usize>) {
            match &e.op {
                PolyOp::Leaf(s) => {
                    if !out.contains(s) {
                        out.push(*s);
                    }
                }
                _ => e.children().into_iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    pub fn map_leaves(&self, f: &impl Fn(usize) -> usize) -> PolyExpr {
        let op = match &self.op {
            PolyOp::Leaf(s) => PolyOp::Leaf(f(*s)),
            PolyOp::AddN(c) => PolyOp::AddN(c.iter().map(|e| e.map_leaves(f)).collect()),
            PolyOp::MulN(c) => PolyOp::MulN(c.iter().map(|e| e.map_leaves(f)).collect()),
            PolyOp::MatMul(a, b) => {
                PolyOp::MatMul(Box::new(a.map_leaves(f)), Box::new(b.map_leaves(f)))
            }
            PolyOp::Gelu(a) => PolyOp::Gelu(Box::new(a.map_leaves(f))),
        };
        PolyExpr {
            op,
            shape: self.shape.clone(),
        }
    }

    /// Naive evaluation with one temporary per operator. N-ary nodes fold
    /// left over their children in order.
    pub fn evaluate(&self, leaf: &impl Fn(usize) -> Tensor) -> Tensor {
        match &self.op {
            PolyOp::Leaf(s) => leaf(*s),
            PolyOp::AddN(c) | PolyOp::MulN(c) => {
                let op = if matches!(self.op, PolyOp::AddN(_)) {
                    Binary::Add
                } else {
                    Binary::Mul
                };
                let mut acc = c[0].evaluate(leaf);
                for child in &c[1..] {
                    let rhs = child.evaluate(leaf);
                    let shape = broadcast_shapes(acc.shape(), rhs.shape()).expect("checked shapes");
                    acc = tensor_ops::binary(op, &acc, &rhs, &shape);
                }
                acc
            }
            PolyOp::MatMul(a, b) => {
                tensor_ops::matmul(&a.evaluate(leaf), &b.evaluate(leaf), &self.shape)
            }
            PolyOp::Gelu(a) => tensor_ops::unary(&a.evaluate(leaf), crate::graph::gelu),
        }
    }
}

/// Flattens nested sums and products and sorts n-ary children by the
/// canonical order. MatMul operands keep their order.
pub fn canonicalize(e: &PolyExpr) -> PolyExpr {
    match &e.op {
        PolyOp::Leaf(_) => e.clone(),
        PolyOp::AddN(children) | PolyOp::MulN(children) => {
            let is_add = matches!(e.op, PolyOp::AddN(_));
            let mut flat = Vec::with_capacity(children.len());
            for child in children {
                let child = canonicalize(child);
                match child.op {
                    PolyOp::AddN(grand) if is_add => flat.extend(grand),
                    PolyOp::MulN(grand) if !is_add => flat.extend(grand),
                    op => flat.push(PolyExpr {
                        op,
                        shape: child.shape,
                    }),
                }
            }
            flat.sort();
            if is_add {
                PolyExpr::add(flat)
            } else {
                PolyExpr::mul(flat)
            }
        }
        PolyOp::MatMul(a, b) => PolyExpr::matmul(canonicalize(a), canonicalize(b)),
        PolyOp::Gelu(a) => PolyExpr::gelu(canonicalize(a)),
    }
}

/// Factors common multiplicands out of sums, bottom-up and to a fixpoint:
/// `sum_i c * t_i  ->  c * (sum_i t_i)`. At each sum the factor shared by
/// the most product terms wins; ties go to the smallest canonical factor.
/// Input and output are canonical. Never increases [`PolyExpr::op_count`].
pub fn apply_distributive_factor(e: &PolyExpr) -> PolyExpr {
    let e = canonicalize(e);
    let rebuilt = match &e.op {
        PolyOp::Leaf(_) => return e,
        PolyOp::AddN(c) => PolyExpr::add(c.iter().map(apply_distributive_factor).collect()),
        PolyOp::MulN(c) => PolyExpr::mul(c.iter().map(apply_distributive_factor).collect()),
        PolyOp::MatMul(a, b) => {
            PolyExpr::matmul(apply_distributive_factor(a), apply_distributive_factor(b))
        }
        PolyOp::Gelu(a) => PolyExpr::gelu(apply_distributive_factor(a)),
    };
    let rebuilt = canonicalize(&rebuilt);
    match factor_once(&rebuilt) {
        Some(next) => apply_distributive_factor(&next),
        None => rebuilt,
    }
}

/// One factoring step at the root sum, if any factor is shared by at least
/// two product terms.
fn factor_once(e: &PolyExpr) -> Option<PolyExpr> {
    let PolyOp::AddN(terms) = &e.op else {
        return None;
    };
    let mut frequency: BTreeMap<&PolyExpr, usize> = BTreeMap::new();
    for term in terms {
        if let PolyOp::MulN(factors) = &term.op {
            let mut distinct: Vec<&PolyExpr> = factors.iter().collect();
            distinct.dedup();
            for f in distinct {
                *frequency.entry(f).or_default() += 1;
            }
        }
    }
    let mut best: Option<(&PolyExpr, usize)> = None;
    for (f, &n) in &frequency {
        if n >= 2 && best.is_none_or(|(_, b)| n > b) {
            best = Some((f, n));
        }
    }
    let (factor, _) = best?;
    let factor = factor.clone();

    let mut rests = Vec::new();
    let mut others = Vec::new();
    for term in terms {
        match &term.op {
            PolyOp::MulN(factors) if factors.contains(&factor) => {
                let pos = factors.iter().position(|f| f == &factor).expect("contains");
                let mut remaining = factors.clone();
                remaining.remove(pos);
                rests.push(if remaining.len() == 1 {
                    remaining.pop().expect("one left")
                } else {
                    PolyExpr::mul(remaining)
                });
            }
            _ => others.push(term.clone()),
        }
    }
    let factored = PolyExpr::mul(vec![factor, PolyExpr::add(rests)]);
    Some(canonicalize(&if others.is_empty() {
        factored
    } else {
        others.push(factored);
        PolyExpr::add(others)
    }))
}

impl fmt::Display for PolyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, c: &[PolyExpr], sep: &str| -> fmt::Result {
            f.write_str("(")?;
            for (i, child) in c.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                write!(f, "{child}")?;
            }
            f.write_str(")")
        };
        match &self.op {
            PolyOp::Leaf(s) => write!(f, "%{s}"),
            PolyOp::AddN(c) => join(f, c, " + "),
            PolyOp::MulN(c) => join(f, c, " * "),
            PolyOp::MatMul(a, b) => write!(f, "({a} @ {b})"),
            PolyOp::Gelu(a) => write!(f, "gelu({a})"),
        }
    }
}
