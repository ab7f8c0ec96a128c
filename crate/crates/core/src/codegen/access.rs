use crate::graph::TensorShape;

/// Rectangular loop domain `[0, extent)` per dimension, outer to inner.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IterationDomain {
    pub extents: Vec<usize>,
}

impl IterationDomain {
    pub fn rows(&self) -> usize {
        self.extents[0]
    }

    pub fn cols(&self) -> usize {
        self.extents[1]
    }

    pub fn points(&self) -> usize {
        self.extents.iter().product()
    }
}

/// Affine map from loop indices to a flat row-major offset. Coefficients
/// on dimensions an operand broadcasts along are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AccessFunction {
    pub coeffs: Vec<isize>,
    pub offset: isize,
}

impl AccessFunction {
    /// Row-major read of `operand` at the same index, with zero
    /// coefficients where either side has extent 1. `None` when the
    /// operand is not row-broadcast compatible with `domain`.
    pub fn broadcast_read(operand: &TensorShape, domain: &TensorShape) -> Option<Self> {
        if operand.rank() != domain.rank() {
            return None;
        }
        let (od, dd) = (operand.dims(), domain.dims());
        if od.iter().zip(dd).any(|(&o, &d)| o != d && o != 1) {
            return None;
        }
        if od[1..] != dd[1..] {
            return None;
        }
        let coeffs = operand
            .strides()
            .iter()
            .zip(od.iter().zip(dd))
            .map(|(&s, (&o, &d))| if o == 1 || d == 1 { 0 } else { s as isize })
            .collect();
        Some(Self { coeffs, offset: 0 })
    }

    /// `consumer[i, j]` reads `producer[j, i]`, where `producer` is the
    /// transposed shape of the consumer domain.
    pub fn transposed_read(producer: &TensorShape) -> Self {
        let (p0, p1) = (producer.dims()[0], producer.dims()[1]);
        let ci = if p1 == 1 { 0 } else { 1 };
        let cj = if p0 == 1 { 0 } else { p1 as isize };
        Self {
            coeffs: vec![ci, cj],
            offset: 0,
        }
    }

    pub fn offset_at(&self, index: &[usize]) -> usize {
        let off = self.offset
            + self
                .coeffs
                .iter()
                .zip(index)
                .map(|(&c, &i)| c * i as isize)
                .sum::<isize>();
        off as usize
    }
}

/// A producer computed inside a fused nest and read by a consumer over the
/// consumer's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dependence {
    pub producer: TensorShape,
    pub consumer: TensorShape,
    pub read: AccessFunction,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_row_has_zero_row_coefficient() {
        let f = AccessFunction::broadcast_read(&TensorShape::matrix(1, 7), &TensorShape::matrix(5, 7))
            .unwrap();
        assert_eq!(f.coeffs, vec![0, 1]);
        let id = AccessFunction::broadcast_read(&TensorShape::matrix(5, 7), &TensorShape::matrix(5, 7))
            .unwrap();
        assert_eq!(id.coeffs, vec![7, 1]);
        assert!(AccessFunction::broadcast_read(&TensorShape::matrix(7, 5), &TensorShape::matrix(5, 7))
            .is_none());
    }

    #[test]
    fn scalar_read_is_constant() {
        let f = AccessFunction::broadcast_read(&TensorShape::matrix(1, 1), &TensorShape::matrix(1, 1))
            .unwrap();
        assert_eq!(f.coeffs, vec![0, 0]);
    }

    #[test]
    fn transposed_offsets() {
        let f = AccessFunction::transposed_read(&TensorShape::matrix(3, 4));
        // consumer domain 4x3; consumer (i, j) reads producer (j, i)
        assert_eq!(f.offset_at(&[2, 1]), 4 + 2);
    }
}
