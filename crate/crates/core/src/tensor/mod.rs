//! Dense row-major tensors, the recorded compute graph, and gradient checking.

pub mod alloc;
mod gradcheck;
mod graph;
mod params;

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;
use alloc::Buffer;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, FD_STEP, SIGNIFICANT_GRAD};
pub use graph::{Graph, Var};
pub use graph::BatchStats;
pub use params::{GradStore, ParamId, ParamKind, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("expected a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major array. Vectors have shape `[n]`, matrices `[rows, cols]`,
/// scalars `[]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Buffer<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Shape {
                op: "new",
                detail: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Buffer::from_vec(data),
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Buffer::from_vec(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data.into_vec()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => self.len(),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Value of a scalar or single-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        )
    }

    /// Plain (unrecorded) matrix product of `[m, k]` by `[k, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor::from_parts(vec![m, n], out))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.len() <= 16 {
            write!(f, "{:?}", &self.data[..])?;
        }
        Ok(())
    }
}

pub(crate) mod kernels {
    use crate::scalar::Scalar;

    #[inline]
    pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
        let mut acc = T::zero();
        for (x, y) in a.iter().zip(b) {
            acc += *x * *y;
        }
        acc
    }

    #[inline]
    pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * *xi;
        }
    }

    /// out[m×n] += a[m×k] · b[k×n]
    pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip != T::zero() {
                    axpy(aip, &b[p * n..(p + 1) * n], orow);
                }
            }
        }
    }

    /// out[m×n] += a[m×k] · b[n×k]ᵀ
    pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
            }
        }
    }

    /// out[k×n] += a[m×k]ᵀ · b[m×n]
    pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let brow = &b[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip != T::zero() {
                    axpy(aip, brow, &mut out[p * n..(p + 1) * n]);
                }
            }
        }
    }

    /// out[m] += w[m×n] · x[n]
    pub fn matvec<T: Scalar>(w: &[T], x: &[T], out: &mut [T], n: usize) {
        for (i, o) in out.iter_mut().enumerate() {
            *o += dot(&w[i * n..(i + 1) * n], x);
        }
    }

    /// out[n] += w[m×n]ᵀ · g[m]
    pub fn matvec_t<T: Scalar>(w: &[T], g: &[T], out: &mut [T], n: usize) {
        for (i, gi) in g.iter().enumerate() {
            if *gi != T::zero() {
                axpy(*gi, &w[i * n..(i + 1) * n], out);
            }
        }
    }

    /// w[m×n] += g[m] ⊗ x[n]
    pub fn outer_acc<T: Scalar>(g: &[T], x: &[T], w: &mut [T], n: usize) {
        for (i, gi) in g.iter().enumerate() {
            if *gi != T::zero() {
                axpy(*gi, x, &mut w[i * n..(i + 1) * n]);
            }
        }
    }

    pub fn sigmoid<T: Scalar>(x: T) -> T {
        if x >= T::zero() {
            T::one() / (T::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (T::one() + e)
        }
    }

    /// Numerically stable softmax into `out`.
    pub fn softmax<T: Scalar>(x: &[T], out: &mut [T]) {
        let max = x.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let mut sum = T::zero();
        for (o, v) in out.iter_mut().zip(x) {
            *o = (*v - max).exp();
            sum += *o;
        }
        // strictly positive outputs even when exp underflows
        let floor = T::min_positive_value();
        for o in out.iter_mut() {
            *o = (*o / sum).max(floor);
        }
    }

    /// Numerically stable log-softmax into `out`.
    pub fn log_softmax<T: Scalar>(x: &[T], out: &mut [T]) {
        let max = x.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let mut sum = T::zero();
        for v in x {
            sum += (*v - max).exp();
        }
        let lse = max + sum.ln();
        for (o, v) in out.iter_mut().zip(x) {
            *o = *v - lse;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let i2 = Tensor::<f64>::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&m).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn projector_selects_row() {
        let p = Tensor::<f64>::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(p.matmul(&m).unwrap().data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn softmax_extremes() {
        let mut out = [0.0f64; 2];
        kernels::softmax(&[1000.0, 0.0], &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out[0] - 1.0).abs() < 1e-12 && out[1] > 0.0 && out[1] < 1e-300);
        let mut out = [0.0f64; 3];
        kernels::softmax(&[0.0, 0.0, 0.0], &mut out);
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
