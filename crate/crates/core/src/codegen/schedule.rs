use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::lower::{LoopNest, Stmt};

pub const UNROLL_FACTORS: [usize; 4] = [1, 2, 4, 8];
pub const DEFAULT_LAMBDA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopOrder {
    /// `for i { for j }`: row-major traversal.
    RowOuter,
    /// `for j { for i }`: column-major traversal.
    ColOuter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RedundancyProfile {
    /// Operator executions beyond one per distinct value.
    pub redundant_flops: u64,
    /// Sum over loads of the access coefficient on the innermost loop.
    pub stride_cost: u64,
}

/// One executable schedule of a [`LoopNest`]. With `hoist`, loop-invariant
/// subexpressions are computed once and column-only subexpressions once
/// per column; otherwise everything is recomputed at every point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleVariant {
    pub order: LoopOrder,
    pub hoist: bool,
    pub unroll: usize,
    pub workers: usize,
}

impl ScheduleVariant {
    /// Row-outer, no hoisting.
    pub const FUSE_ADD: Self = Self {
        order: LoopOrder::RowOuter,
        hoist: false,
        unroll: 1,
        workers: 1,
    };
    /// Column-outer with hoisted temporaries.
    pub const FUSE_ADD_PRIME: Self = Self {
        order: LoopOrder::ColOuter,
        hoist: true,
        unroll: 1,
        workers: 1,
    };

    pub fn base_variants() -> [Self; 2] {
        [Self::FUSE_ADD, Self::FUSE_ADD_PRIME]
    }

    pub fn with_unroll(self, unroll: usize) -> Self {
        Self { unroll, ..self }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Self { workers, ..self }
    }

    pub fn name(&self) -> &'static str {
        match (self.order, self.hoist) {
            (LoopOrder::RowOuter, false) => "fuse_add",
            (LoopOrder::ColOuter, true) => "fuse_add'",
            (LoopOrder::RowOuter, true) => "row-outer-hoisted",
            (LoopOrder::ColOuter, false) => "col-outer",
        }
    }
}

/// The two base schedules crossed with every unroll factor.
pub fn gen_variants(_nest: &LoopNest) -> Vec<ScheduleVariant> {
    ScheduleVariant::base_variants()
        .into_iter()
        .flat_map(|v| UNROLL_FACTORS.map(|u| v.with_unroll(u)))
        .collect()
}

struct Walk {
    rows: u64,
    cols: u64,
    order: LoopOrder,
    hoist: bool,
    redundant: u64,
    stride: u64,
    touched: u64,
}

impl Walk {
    fn ideal(&self, level: u8) -> u64 {
        match level {
            0 => 1,
            1 => self.cols,
            _ => self.rows * self.cols,
        }
    }

    fn actual(&self, level: u8) -> u64 {
        if self.hoist {
            self.ideal(level)
        } else {
            self.rows * self.cols
        }
    }

    fn visit(&mut self, s: &Stmt) {
        let level = s.level();
        let ops = match s {
            Stmt::Load { access, .. } => {
                let inner = match self.order {
                    LoopOrder::RowOuter => access.coeffs[1],
                    LoopOrder::ColOuter => access.coeffs[0],
                };
                self.stride += inner.unsigned_abs() as u64;
                self.touched += inner.unsigned_abs() as u64 * self.actual(level);
                0
            }
            Stmt::Add(c) | Stmt::Mul(c) => c.len() as u64 - 1,
            Stmt::Gelu(_) => 1,
        };
        self.redundant += ops * (self.actual(level) - self.ideal(level));
        match s {
            Stmt::Load { .. } => {}
            Stmt::Add(c) | Stmt::Mul(c) => c.iter().for_each(|x| self.visit(x)),
            Stmt::Gelu(a) => self.visit(a),
        }
    }
}

fn walk(nest: &LoopNest, v: &ScheduleVariant) -> Walk {
    let mut w = Walk {
        rows: nest.domain.rows() as u64,
        cols: nest.domain.cols() as u64,
        order: v.order,
        hoist: v.hoist,
        redundant: 0,
        stride: 0,
        touched: 0,
    };
    w.visit(&nest.body);
    w
}

pub fn redundancy_profile(nest: &LoopNest, v: &ScheduleVariant) -> RedundancyProfile {
    let w = walk(nest, v);
    RedundancyProfile {
        redundant_flops: w.redundant,
        stride_cost: w.stride,
    }
}

/// `sum(stride * elements touched) + lambda * redundant_flops`. Only for
/// ordering variants; selection is by measurement.
pub fn estimate_locality(nest: &LoopNest, v: &ScheduleVariant, lambda: f64) -> f64 {
    let w = walk(nest, v);
    w.touched as f64 + lambda * w.redundant as f64
}

/// Text description of a variant:
///
/// ```text
/// variant fuse_add
/// domain 512x512
/// order i j
/// hoist none
/// unroll 4
/// workers 1
/// redundant_flops 261632
/// stride_cost 4
/// ```
pub fn dump_variant(nest: &LoopNest, v: &ScheduleVariant) -> String {
    let p = redundancy_profile(nest, v);
    let mut out = String::new();
    let order = match v.order {
        LoopOrder::RowOuter => "i j",
        LoopOrder::ColOuter => "j i",
    };
    let hoist = match (v.hoist, v.order) {
        (false, _) => "none",
        (true, LoopOrder::RowOuter) => "level0=entry level1=entry",
        (true, LoopOrder::ColOuter) => "level0=entry level1=j",
    };
    let _ = writeln!(out, "variant {}", v.name());
    let _ = writeln!(out, "domain {}x{}", nest.domain.rows(), nest.domain.cols());
    let _ = writeln!(out, "order {order}");
    let _ = writeln!(out, "hoist {hoist}");
    let _ = writeln!(out, "unroll {}", v.unroll);
    let _ = writeln!(out, "workers {}", v.workers);
    let _ = writeln!(out, "redundant_flops {}", p.redundant_flops);
    let _ = writeln!(out, "stride_cost {}", p.stride_cost);
    out
}
