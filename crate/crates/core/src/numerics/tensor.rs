use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Every operation in the crate treats a tensor as a matrix whose column count
/// is the last dimension and whose row count is the product of the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("dimensions must be positive: {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn column(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            data: values,
        }
    }

    /// Rows stacked into a `[rows.len(), dim]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("no rows to stack".into()))?;
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Uniform entries in `[-limit, limit]`.
    pub fn uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is non-empty")
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn same_shape(&self, other: &Tensor) -> bool {
        self.rows() == other.rows() && self.cols() == other.cols()
    }
}

/// `c = a · b` for row-major `a: [m,k]`, `b: [k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(a, false, b, false, &mut c, m, k, n, 0.0);
    c
}

/// General product `c = op(a) · op(b) + beta·c` where `op` optionally transposes.
///
/// `a` is stored as `[m,k]` (or `[k,m]` when `trans_a`), `b` as `[k,n]`
/// (or `[n,k]` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides and extents describe exactly the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable in-place log-softmax.
pub fn log_softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for x in v.iter_mut() {
        *x -= lse;
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
