//! Schedule interpreter.
//!
//! The statement tree is flattened into a register program (one register
//! per operator, n-ary nodes folded left) and run over strips of up to
//! [`STRIP`] points along the innermost loop. Every point sees the same
//! operator sequence on the same values whatever the schedule, so all
//! variants agree bitwise.

use super::lower::{LoopNest, Operand, Stmt};
use super::schedule::{LoopOrder, ScheduleVariant};
use super::CodegenError;
use crate::graph::tensor::Binary;
use crate::graph::{gelu, Tensor};

pub const STRIP: usize = 512;

#[derive(Debug, Clone, PartialEq)]
enum Instr {
    Load { operand: Operand, ci: usize, cj: usize },
    Bin(Binary, usize, usize),
    Gelu(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Program {
    instrs: Vec<Instr>,
    levels: Vec<u8>,
    out: usize,
    /// Register slot of each instruction.
    slots: Vec<usize>,
    n_slots: usize,
}

impl Program {
    pub(crate) fn compile(body: &Stmt) -> Self {
        let mut p = Program {
            instrs: Vec::new(),
            levels: Vec::new(),
            out: 0,
            slots: Vec::new(),
            n_slots: 0,
        };
        p.out = p.emit(body);
        p.assign_slots();
        p
    }

    fn operands(&self, k: usize) -> Vec<usize> {
        match self.instrs[k] {
            Instr::Load { .. } => Vec::new(),
            Instr::Bin(_, a, b) => vec![a, b],
            Instr::Gelu(a) => vec![a],
        }
    }

    /// Linear-scan slot reuse. A slot is released after the last reader of
    /// its value; values read from an outer loop level and the result keep
    /// their slot for the whole program.
    fn assign_slots(&mut self) {
        let n = self.instrs.len();
        let mut last_use = vec![None; n];
        let mut pinned = vec![false; n];
        pinned[self.out] = true;
        for k in 0..n {
            for a in self.operands(k) {
                last_use[a] = Some(k);
                if self.levels[k] > self.levels[a] {
                    pinned[a] = true;
                }
            }
        }
        let mut free: Vec<usize> = Vec::new();
        self.slots = vec![0; n];
        for k in 0..n {
            self.slots[k] = free.pop().unwrap_or_else(|| {
                self.n_slots += 1;
                self.n_slots - 1
            });
            let mut done = self.operands(k);
            done.dedup();
            for a in done {
                if last_use[a] == Some(k) && !pinned[a] {
                    free.push(self.slots[a]);
                }
            }
        }
    }

    fn push(&mut self, instr: Instr, level: u8) -> usize {
        self.instrs.push(instr);
        self.levels.push(level);
        self.instrs.len() - 1
    }

    fn emit(&mut self, s: &Stmt) -> usize {
        match s {
            Stmt::Load { operand, access } => {
                let instr = Instr::Load {
                    operand: *operand,
                    ci: access.coeffs[0] as usize,
                    cj: access.coeffs[1] as usize,
                };
                match self.instrs.iter().position(|i| *i == instr) {
                    Some(k) => k,
                    None => self.push(instr, s.level()),
                }
            }
            Stmt::Add(c) | Stmt::Mul(c) => {
                let op = if matches!(s, Stmt::Add(_)) {
                    Binary::Add
                } else {
                    Binary::Mul
                };
                let mut acc = self.emit(&c[0]);
                for child in &c[1..] {
                    let rhs = self.emit(child);
                    let level = self.levels[acc].max(self.levels[rhs]);
                    acc = self.push(Instr::Bin(op, acc, rhs), level);
                }
                acc
            }
            Stmt::Gelu(a) => {
                let r = self.emit(a);
                let level = self.levels[r];
                self.push(Instr::Gelu(r), level)
            }
        }
    }

    fn ids_at(&self, level: u8) -> Vec<usize> {
        (0..self.instrs.len()).filter(|&k| self.levels[k] == level).collect()
    }
}

#[derive(Clone, Copy)]
enum Pos {
    Row { i: usize, j0: usize },
    Col { j: usize, i0: usize },
}

impl Pos {
    fn base_stride(self, ci: usize, cj: usize) -> (usize, usize) {
        match self {
            Pos::Row { i, j0 } => (i * ci + j0 * cj, cj),
            Pos::Col { j, i0 } => (i0 * ci + j * cj, ci),
        }
    }
}

enum Src<'a> {
    Scalar(f32),
    Slice(&'a [f32]),
}

#[derive(Clone)]
struct Hoisted {
    scalar: Vec<Option<f32>>,
    row: Vec<Option<Vec<f32>>>,
}

impl Hoisted {
    fn new(n: usize) -> Self {
        Self {
            scalar: vec![None; n],
            row: vec![None; n],
        }
    }
}

fn fill_or_gather<const U: usize>(dst: &mut [f32], buf: &[f32], base: usize, stride: usize) {
    match stride {
        0 => dst.fill(buf[base]),
        1 => dst.copy_from_slice(&buf[base..base + dst.len()]),
        _ => {
            let split = dst.len() - dst.len() % U;
            for (c, chunk) in dst[..split].chunks_exact_mut(U).enumerate() {
                let start = base + c * U * stride;
                for (t, d) in chunk.iter_mut().enumerate() {
                    *d = buf[start + t * stride];
                }
            }
            for (t, d) in dst.iter_mut().enumerate().skip(split) {
                *d = buf[base + t * stride];
            }
        }
    }
}

fn map1<const U: usize>(dst: &mut [f32], a: &Src<'_>, f: impl Fn(f32) -> f32) {
    match a {
        Src::Scalar(x) => dst.fill(f(*x)),
        Src::Slice(a) => {
            let (dc, dr) = dst.as_chunks_mut::<U>();
            let (ac, ar) = a.as_chunks::<U>();
            for (d, x) in dc.iter_mut().zip(ac) {
                for t in 0..U {
                    d[t] = f(x[t]);
                }
            }
            for (d, x) in dr.iter_mut().zip(ar) {
                *d = f(*x);
            }
        }
    }
}

fn map2<const U: usize>(dst: &mut [f32], a: &Src<'_>, b: &Src<'_>, op: Binary) {
    match op {
        Binary::Add => zip2::<U>(dst, a, b, |x, y| x + y),
        Binary::Mul => zip2::<U>(dst, a, b, |x, y| x * y),
    }
}

#[inline(always)]
fn zip2<const U: usize>(dst: &mut [f32], a: &Src<'_>, b: &Src<'_>, f: impl Fn(f32, f32) -> f32) {
    let (dc, dr) = dst.as_chunks_mut::<U>();
    match (a, b) {
        (Src::Slice(a), Src::Slice(b)) => {
            let ((ac, ar), (bc, br)) = (a.as_chunks::<U>(), b.as_chunks::<U>());
            for ((d, x), y) in dc.iter_mut().zip(ac).zip(bc) {
                for t in 0..U {
                    d[t] = f(x[t], y[t]);
                }
            }
            for ((d, x), y) in dr.iter_mut().zip(ar).zip(br) {
                *d = f(*x, *y);
            }
        }
        (Src::Scalar(x), Src::Slice(b)) => {
            let (bc, br) = b.as_chunks::<U>();
            for (d, y) in dc.iter_mut().zip(bc) {
                for t in 0..U {
                    d[t] = f(*x, y[t]);
                }
            }
            for (d, y) in dr.iter_mut().zip(br) {
                *d = f(*x, *y);
            }
        }
        (Src::Slice(a), Src::Scalar(y)) => {
            let (ac, ar) = a.as_chunks::<U>();
            for (d, x) in dc.iter_mut().zip(ac) {
                for t in 0..U {
                    d[t] = f(x[t], *y);
                }
            }
            for (d, x) in dr.iter_mut().zip(ar) {
                *d = f(*x, *y);
            }
        }
        (Src::Scalar(x), Src::Scalar(y)) => dst.fill(f(*x, *y)),
    }
}

struct Engine<'a> {
    prog: &'a Program,
    leaves: Vec<&'a [f32]>,
    temps: Vec<&'a [f32]>,
    rows: usize,
    cols: usize,
    unroll: usize,
}

impl Engine<'_> {
    fn src<'r>(&'r self, r: usize, len: usize, pos: Pos, regs: &'r [Vec<f32>], h: &'r Hoisted) -> Src<'r> {
        if let Some(x) = h.scalar[r] {
            return Src::Scalar(x);
        }
        if let (Some(row), Pos::Row { j0, .. }) = (&h.row[r], pos) {
            return Src::Slice(&row[j0..j0 + len]);
        }
        if let Instr::Load { operand, ci, cj } = self.prog.instrs[r] {
            let (base, stride) = pos.base_stride(ci, cj);
            match stride {
                0 => return Src::Scalar(self.buffer(operand)[base]),
                1 => return Src::Slice(&self.buffer(operand)[base..base + len]),
                _ => {}
            }
        }
        Src::Slice(&regs[self.prog.slots[r]][..len])
    }

    fn buffer(&self, operand: Operand) -> &[f32] {
        match operand {
            Operand::Leaf(s) => self.leaves[s],
            Operand::Temp(t) => self.temps[t],
        }
    }

    fn eval(&self, ids: &[usize], len: usize, pos: Pos, regs: &mut [Vec<f32>], h: &Hoisted) {
        match self.unroll {
            1 => self.eval_u::<1>(ids, len, pos, regs, h),
            2 => self.eval_u::<2>(ids, len, pos, regs, h),
            4 => self.eval_u::<4>(ids, len, pos, regs, h),
            _ => self.eval_u::<8>(ids, len, pos, regs, h),
        }
    }

    fn eval_u<const U: usize>(
        &self,
        ids: &[usize],
        len: usize,
        pos: Pos,
        regs: &mut [Vec<f32>],
        h: &Hoisted,
    ) {
        for &k in ids {
            let slot = self.prog.slots[k];
            let mut dst = std::mem::take(&mut regs[slot]);
            self.compute::<U>(k, &mut dst[..len], pos, regs, h);
            regs[slot] = dst;
        }
    }

    fn compute<const U: usize>(&self, k: usize, out: &mut [f32], pos: Pos, regs: &[Vec<f32>], h: &Hoisted) {
        let len = out.len();
        match self.prog.instrs[k] {
            Instr::Load { operand, ci, cj } => {
                let (base, stride) = pos.base_stride(ci, cj);
                if stride > 1 {
                    fill_or_gather::<U>(out, self.buffer(operand), base, stride);
                }
            }
            Instr::Bin(op, a, b) => {
                let (sa, sb) = (self.src(a, len, pos, regs, h), self.src(b, len, pos, regs, h));
                map2::<U>(out, &sa, &sb, op);
            }
            Instr::Gelu(a) => map1::<U>(out, &self.src(a, len, pos, regs, h), gelu),
        }
    }

    /// Evaluates `ids` and writes the program result into `dst`. The final
    /// operator writes `dst` directly when it is computed per point.
    fn emit(&self, ids: &[usize], dst: &mut [f32], pos: Pos, regs: &mut [Vec<f32>], h: &Hoisted) {
        let len = dst.len();
        let out = self.prog.out;
        let direct = ids.last() == Some(&out) && !matches!(self.prog.instrs[out], Instr::Load { .. });
        if direct {
            self.eval(&ids[..ids.len() - 1], len, pos, regs, h);
            match self.unroll {
                1 => self.compute::<1>(out, dst, pos, regs, h),
                2 => self.compute::<2>(out, dst, pos, regs, h),
                4 => self.compute::<4>(out, dst, pos, regs, h),
                _ => self.compute::<8>(out, dst, pos, regs, h),
            }
            return;
        }
        self.eval(ids, len, pos, regs, h);
        match self.src(out, len, pos, regs, h) {
            Src::Scalar(x) => dst.fill(x),
            Src::Slice(v) => dst.copy_from_slice(v),
        }
    }

    fn first(&self, k: usize, pos: Pos, regs: &[Vec<f32>], h: &Hoisted) -> f32 {
        match self.src(k, 1, pos, regs, h) {
            Src::Scalar(x) => x,
            Src::Slice(v) => v[0],
        }
    }

    fn registers(&self, len: usize) -> Vec<Vec<f32>> {
        vec![vec![0.0; len]; self.prog.n_slots]
    }

    /// Level-0 values, computed once at loop entry.
    fn hoist_invariants(&self, regs: &mut [Vec<f32>], h: &mut Hoisted) {
        let ids = self.prog.ids_at(0);
        self.eval(&ids, 1, Pos::Row { i: 0, j0: 0 }, regs, h);
        let pos = Pos::Row { i: 0, j0: 0 };
        for k in ids {
            h.scalar[k] = Some(self.first(k, pos, regs, h));
        }
    }

    /// Level-1 values for every column, computed once at loop entry.
    fn hoist_rows(&self, regs: &mut [Vec<f32>], h: &mut Hoisted) {
        let ids = self.prog.ids_at(1);
        let mut rows: Vec<Vec<f32>> = ids.iter().map(|_| vec![0.0; self.cols]).collect();
        for j0 in (0..self.cols).step_by(STRIP) {
            let len = STRIP.min(self.cols - j0);
            self.eval(&ids, len, Pos::Row { i: 0, j0 }, regs, h);
            let pos = Pos::Row { i: 0, j0 };
            for (row, &k) in rows.iter_mut().zip(&ids) {
                match self.src(k, len, pos, regs, h) {
                    Src::Scalar(x) => row[j0..j0 + len].fill(x),
                    Src::Slice(v) => row[j0..j0 + len].copy_from_slice(v),
                }
            }
        }
        for (row, k) in rows.into_iter().zip(ids) {
            h.row[k] = Some(row);
        }
    }

    /// Row-outer over rows `first..first + out.len() / cols`.
    fn run_rows(&self, hoist: bool, shared: &Hoisted, first: usize, out: &mut [f32]) {
        let mut regs = self.registers(STRIP.min(self.cols));
        let ids: Vec<usize> = if hoist {
            self.prog.ids_at(2)
        } else {
            (0..self.prog.instrs.len()).collect()
        };
        for (r, row) in out.chunks_mut(self.cols).enumerate() {
            for j0 in (0..self.cols).step_by(STRIP) {
                let len = STRIP.min(self.cols - j0);
                let pos = Pos::Row { i: first + r, j0 };
                self.emit(&ids, &mut row[j0..j0 + len], pos, &mut regs, shared);
            }
        }
    }

    /// Column-outer over `cols`, writing a column-major local buffer.
    fn run_cols(&self, hoist: bool, shared: &Hoisted, cols: std::ops::Range<usize>) -> Vec<f32> {
        let mut local = vec![0.0; cols.len() * self.rows];
        let mut regs = self.registers(STRIP.min(self.rows));
        let mut h = shared.clone();
        let (col_ids, ids): (Vec<usize>, Vec<usize>) = if hoist {
            (self.prog.ids_at(1), self.prog.ids_at(2))
        } else {
            (Vec::new(), (0..self.prog.instrs.len()).collect())
        };
        for (c, j) in cols.enumerate() {
            if !col_ids.is_empty() {
                for &k in &col_ids {
                    h.scalar[k] = None;
                }
                self.eval(&col_ids, 1, Pos::Col { j, i0: 0 }, &mut regs, &h);
                let pos = Pos::Col { j, i0: 0 };
                for &k in &col_ids {
                    let x = self.first(k, pos, &regs, &h);
                    h.scalar[k] = Some(x);
                }
            }
            let column = &mut local[c * self.rows..(c + 1) * self.rows];
            for i0 in (0..self.rows).step_by(STRIP) {
                let len = STRIP.min(self.rows - i0);
                let pos = Pos::Col { j, i0 };
                self.emit(&ids, &mut column[i0..i0 + len], pos, &mut regs, &h);
            }
        }
        local
    }
}

fn check_leaves(nest: &LoopNest, leaves: &[&Tensor]) -> Result<(), CodegenError> {
    if leaves.len() != nest.leaf_shapes.len() {
        return Err(CodegenError::Arity {
            expected: nest.leaf_shapes.len(),
            found: leaves.len(),
        });
    }
    for (slot, (t, s)) in leaves.iter().zip(&nest.leaf_shapes).enumerate() {
        if t.shape() != s {
            return Err(CodegenError::OperandShape {
                slot,
                expected: s.clone(),
                found: t.shape().clone(),
            });
        }
    }
    Ok(())
}

/// Runs `nest` under schedule `v`. `leaves` are the fused node's inputs in
/// slot order.
pub fn execute_schedule(
    nest: &LoopNest,
    v: &ScheduleVariant,
    leaves: &[&Tensor],
) -> Result<Tensor, CodegenError> {
    check_leaves(nest, leaves)?;
    execute_program(nest, &Program::compile(&nest.body), v, leaves)
}

pub(crate) fn execute_program(
    nest: &LoopNest,
    prog: &Program,
    v: &ScheduleVariant,
    leaves: &[&Tensor],
) -> Result<Tensor, CodegenError> {
    let mut temps: Vec<Tensor> = nest
        .pre_stage
        .iter()
        .map(|e| e.evaluate(&|slot| leaves[slot].clone()))
        .collect();
    if nest.is_plain_matmul() {
        let t = temps.pop().expect("one temp");
        return Ok(Tensor::new(nest.out_shape.clone(), t.into_data()).expect("same element count"));
    }
    let (rows, cols) = (nest.domain.rows(), nest.domain.cols());
    let engine = Engine {
        prog,
        leaves: leaves.iter().map(|t| t.data()).collect(),
        temps: temps.iter().map(|t| t.data()).collect(),
        rows,
        cols,
        unroll: v.unroll,
    };
    let mut shared = Hoisted::new(prog.instrs.len());
    if v.hoist {
        let mut regs = engine.registers(STRIP.min(cols.max(rows)));
        engine.hoist_invariants(&mut regs, &mut shared);
        if v.order == LoopOrder::RowOuter {
            engine.hoist_rows(&mut regs, &mut shared);
        }
    }
    let workers = v.workers.clamp(1, 64);
    let mut out = vec![0.0f32; rows * cols];
    match v.order {
        LoopOrder::RowOuter => {
            let per = rows.div_ceil(workers);
            if workers == 1 || rows < 2 {
                engine.run_rows(v.hoist, &shared, 0, &mut out);
            } else {
                std::thread::scope(|scope| {
                    for (w, chunk) in out.chunks_mut(per * cols).enumerate() {
                        let (engine, shared) = (&engine, &shared);
                        scope.spawn(move || engine.run_rows(v.hoist, shared, w * per, chunk));
                    }
                });
            }
        }
        LoopOrder::ColOuter => {
            let per = cols.div_ceil(workers);
            let ranges: Vec<std::ops::Range<usize>> = (0..cols)
                .step_by(per)
                .map(|c| c..(c + per).min(cols))
                .collect();
            let locals: Vec<Vec<f32>> = if ranges.len() == 1 {
                vec![engine.run_cols(v.hoist, &shared, ranges[0].clone())]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = ranges
                        .iter()
                        .map(|r| {
                            let (engine, shared, r) = (&engine, &shared, r.clone());
                            scope.spawn(move || engine.run_cols(v.hoist, shared, r))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                })
            };
            for (range, local) in ranges.iter().zip(&locals) {
                for (c, j) in range.clone().enumerate() {
                    for i in 0..rows {
                        out[i * cols + j] = local[c * rows + i];
                    }
                }
            }
        }
    }
    Ok(Tensor::new(nest.out_shape.clone(), out).expect("domain covers the output"))
}
