//! Element-order simulation oracle for fused-block legality.

use std::collections::BTreeSet;

use fusekit_core::codegen::{AccessFunction, Dependence};
use fusekit_core::TensorShape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Read {
    Same,
    Broadcast,
    Transpose,
}

pub const READS: [Read; 3] = [Read::Same, Read::Broadcast, Read::Transpose];

/// Producer shape and access for a consumer of shape `c` reading through `r`.
pub fn edge(c: &TensorShape, r: Read) -> (TensorShape, AccessFunction) {
    let (m, n) = (c.dims()[0], c.dims()[1]);
    let p = match r {
        Read::Same => TensorShape::matrix(m, n),
        Read::Broadcast => TensorShape::matrix(1, n),
        Read::Transpose => TensorShape::matrix(n, m),
    };
    let f = match r {
        Read::Transpose => AccessFunction::transposed_read(&p),
        _ => AccessFunction::broadcast_read(&p, c).unwrap(),
    };
    (p, f)
}

/// Reads of producer element coordinates made by consumer point `(i, j)`.
pub fn read_coords(r: Read, i: usize, j: usize) -> (usize, usize) {
    match r {
        Read::Same => (i, j),
        Read::Broadcast => (0, j),
        Read::Transpose => (j, i),
    }
}

pub struct Block {
    pub shapes: Vec<TensorShape>,
    /// (producer, consumer, read relation); node indices are topological.
    pub edges: Vec<(usize, usize, Read)>,
}

/// Walks the union domain in row-major order; at each point every node
/// whose domain contains it first reads its in-block operands, then writes
/// its own element. Illegal when a read targets an unwritten element.
pub fn simulate(b: &Block) -> bool {
    let rows = b.shapes.iter().map(|s| s.dims()[0]).max().unwrap();
    let cols = b.shapes.iter().map(|s| s.dims()[1]).max().unwrap();
    let mut written: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); b.shapes.len()];
    for i in 0..rows {
        for j in 0..cols {
            for (node, shape) in b.shapes.iter().enumerate() {
                if i >= shape.dims()[0] || j >= shape.dims()[1] {
                    continue;
                }
                for &(p, _, r) in b.edges.iter().filter(|e| e.1 == node) {
                    if !written[p].contains(&read_coords(r, i, j)) {
                        return false;
                    }
                }
                written[node].insert((i, j));
            }
        }
    }
    true
}

pub fn deps(b: &Block) -> Vec<Dependence> {
    b.edges
        .iter()
        .map(|&(p, c, r)| {
            let (shape, read) = edge(&b.shapes[c], r);
            assert_eq!(shape, b.shapes[p]);
            Dependence {
                producer: shape,
                consumer: b.shapes[c].clone(),
                read,
            }
        })
        .collect()
}

pub fn blocks() -> Vec<Block> {
    let mut out = Vec::new();
    for m in 1..=4 {
        for n in 1..=4 {
            let out_shape = TensorShape::matrix(m, n);
            for r1 in READS {
                let (p, _) = edge(&out_shape, r1);
                out.push(Block {
                    shapes: vec![p.clone(), out_shape.clone()],
                    edges: vec![(0, 1, r1)],
                });
                for r0 in READS {
                    let (pp, _) = edge(&p, r0);
                    out.push(Block {
                        shapes: vec![pp, p.clone(), out_shape.clone()],
                        edges: vec![(0, 1, r0), (1, 2, r1)],
                    });
                    let (q, _) = edge(&out_shape, r0);
                    out.push(Block {
                        shapes: vec![p.clone(), q, out_shape.clone()],
                        edges: vec![(0, 2, r1), (1, 2, r0)],
                    });
                }
            }
        }
    }
    out
}
