use rand::Rng;

use super::TensorShape;

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f32>) -> Result<Self, String> {
        if data.len() != shape.numel() {
            return Err(format!(
                "{} elements supplied for shape {shape}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let n = shape.numel();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_fn(shape: TensorShape, f: impl FnMut(usize) -> f32) -> Self {
        let data = (0..shape.numel()).map(f).collect();
        Self { shape, data }
    }

    /// Uniform values in `[-1, 1)`.
    pub fn random(shape: TensorShape, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(TensorShape::matrix(n, n), |i| {
            if i / n == i % n {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Tanh approximation of GELU. Both the reference interpreter and the
/// schedule engine call this exact function so their results agree bitwise.
#[inline]
pub fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + tanh_f32(SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)))
}

/// Rational tanh, within 1e-6 of libm and saturating past about 8.
#[inline]
#[allow(clippy::manual_clamp)]
pub fn tanh_f32(x: f32) -> f32 {
    const LIMIT: f32 = 7.998_811_7;
    let x = if x > LIMIT {
        LIMIT
    } else if x < -LIMIT {
        -LIMIT
    } else {
        x
    };
    let x2 = x * x;
    let mut p = -2.760_768_5e-16_f32;
    p = x2 * p + 2.000_188e-13;
    p = x2 * p - 8.604_672e-11;
    p = x2 * p + 5.122_297e-8;
    p = x2 * p + 1.485_722_4e-5;
    p = x2 * p + 6.372_619_3e-4;
    p = x2 * p + 4.893_524_6e-3;
    let mut q = 1.198_258_4e-6_f32;
    q = x2 * q + 1.185_347_1e-4;
    q = x2 * q + 2.268_434_6e-3;
    q = x2 * q + 4.893_525e-3;
    x * p / q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Mul,
}

impl Binary {
    #[inline]
    pub(crate) fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            Binary::Add => a + b,
            Binary::Mul => a * b,
        }
    }
}

/// Elementwise binary op with leading-dim-1 broadcast. Shapes are assumed
/// checked by inference.
pub(crate) fn binary(op: Binary, lhs: &Tensor, rhs: &Tensor, out_shape: &TensorShape) -> Tensor {
    let n = out_shape.numel();
    let ln = lhs.data.len();
    let rn = rhs.data.len();
    let mut out = Vec::with_capacity(n);
    if ln == n && rn == n {
        out.extend(lhs.data.iter().zip(&rhs.data).map(|(&a, &b)| op.apply(a, b)));
    } else {
        for idx in 0..n {
            out.push(op.apply(lhs.data[idx % ln], rhs.data[idx % rn]));
        }
    }
    Tensor {
        shape: out_shape.clone(),
        data: out,
    }
}

/// `out[m, n] = sum_k a[m, k] * b[k, n]`, accumulating in increasing `k`
/// from zero. The i-k-j loop order keeps that per-element summation order.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor, out_shape: &TensorShape) -> Tensor {
    let (m, k) = (a.shape.dims()[0], a.shape.dims()[1]);
    let n = b.shape.dims()[1];
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Tensor {
        shape: out_shape.clone(),
        data: out,
    }
}

pub(crate) fn transpose(x: &Tensor, perm: &[usize], out_shape: &TensorShape) -> Tensor {
    let in_strides = x.shape.strides();
    let out_dims = out_shape.dims();
    let rank = out_dims.len();
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut index = vec![0usize; rank];
    for _ in 0..out_shape.numel() {
        let src: usize = (0..rank).map(|d| index[d] * in_strides[perm[d]]).sum();
        out.push(x.data[src]);
        for d in (0..rank).rev() {
            index[d] += 1;
            if index[d] < out_dims[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Tensor {
        shape: out_shape.clone(),
        data: out,
    }
}

pub(crate) fn unary(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

/// Row-wise softmax over the last dim.
pub(crate) fn softmax(x: &Tensor) -> Tensor {
    let (_, cols) = x.shape.as_rows();
    let mut out = x.data.clone();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}

pub(crate) const LAYERNORM_EPS: f32 = 1e-5;

/// Row-wise normalization to zero mean and unit variance (no affine
/// parameters).
pub(crate) fn layernorm(x: &Tensor) -> Tensor {
    let (_, cols) = x.shape.as_rows();
    let mut out = x.data.clone();
    for row in out.chunks_mut(cols) {
        let mean = row.iter().sum::<f32>() / cols as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
        let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}
