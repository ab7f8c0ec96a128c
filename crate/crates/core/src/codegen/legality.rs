//! Fusion legality by dependence analysis.
//!
//! In a fused nest every producer element `q` is written at loop point `q`
//! and read at consumer point `x`. A fusion is legal when no read targets an
//! element written at a lexicographically later point. Reads are first
//! decoded into a selection map (each producer index is a consumer loop
//! variable or the constant 0); the existence of a violating point is then
//! decided per leading dimension with a union-find over equal variables.
//! Accesses that are not selection maps are rejected.

use super::access::Dependence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sel {
    Zero,
    Var(usize),
}

/// True iff every dependence is satisfied under the fused loop order.
pub fn legality_check(deps: &[Dependence]) -> bool {
    deps.iter().all(edge_is_legal)
}

fn selection_map(dep: &Dependence) -> Option<Vec<Sel>> {
    let (pd, cd) = (dep.producer.dims(), dep.consumer.dims());
    if pd.len() != cd.len() || dep.read.coeffs.len() != cd.len() || dep.read.offset != 0 {
        return None;
    }
    let strides = dep.producer.strides();
    let mut sel = vec![Sel::Zero; pd.len()];
    let mut used = vec![false; pd.len()];
    for (d, &c) in dep.read.coeffs.iter().enumerate() {
        if c == 0 || cd[d] == 1 {
            continue;
        }
        let p = (0..pd.len()).find(|&p| !used[p] && pd[p] > 1 && strides[p] as isize == c)?;
        if cd[d] > pd[p] {
            return None;
        }
        used[p] = true;
        sel[p] = Sel::Var(d);
    }
    Some(sel)
}

struct Classes {
    parent: Vec<usize>,
    pinned: Vec<bool>,
}

impl Classes {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            pinned: vec![false; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
            self.pinned[rb] |= self.pinned[ra];
        }
    }

    fn pin(&mut self, x: usize) {
        let r = self.find(x);
        self.pinned[r] = true;
    }
}

fn edge_is_legal(dep: &Dependence) -> bool {
    let Some(sel) = selection_map(dep) else {
        return false;
    };
    let extents = dep.consumer.dims();
    let rank = extents.len();
    // A violation agrees on dims < d and reads further ahead on dim d.
    for d in 0..rank {
        let mut classes = Classes::new(rank);
        for (k, s) in sel.iter().enumerate().take(d) {
            match *s {
                Sel::Zero => classes.pin(k),
                Sel::Var(v) => classes.union(k, v),
            }
        }
        let Sel::Var(s) = sel[d] else { continue };
        let (rs, rd) = (classes.find(s), classes.find(d));
        if rs == rd || classes.pinned[rs] {
            continue;
        }
        let max_s = (0..rank)
            .filter(|&v| classes.find(v) == rs)
            .map(|v| extents[v])
            .min()
            .expect("class is non-empty")
            - 1;
        if max_s >= 1 {
            return false;
        }
    }
    true
}
