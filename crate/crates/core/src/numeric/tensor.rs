//! Dense row-major tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array. Most of the crate works with rank-2 tensors;
/// rank-1 tensors (biases) are viewed as a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Tensor::from_rows", "ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
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

    /// Row count when viewed as a matrix (rank-1 tensors are one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} values", self.data.len());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// `self += s · other`
    pub fn axpy(&mut self, s: T, other: &Self) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.data.len(), other.data.len(), "dot length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// `self · wᵀ`, with `w` of shape `out×in` and `self` of shape `rows×in`.
    pub fn matmul_t(&self, w: &Self) -> Result<Self> {
        if self.cols() != w.cols() {
            return Err(Error::shape(
                "matmul_t",
                format!("input has {} columns, weight expects {}", self.cols(), w.cols()),
            ));
        }
        let (m, k, n) = (self.rows(), self.cols(), w.rows());
        let mut out = Self::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            k,
            1,
            &w.data,
            1,
            k,
            T::zero(),
            &mut out.data,
            n,
            1,
        );
        Ok(out)
    }

    /// Reorders rows so that row `perm[i]` of the result is row `i` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let c = self.cols();
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.data[p * c..(p + 1) * c].copy_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        out
    }
}

/// Elementwise rectifier.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Elementwise logistic function.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(logistic)
}

pub(crate) fn logistic<T: Scalar>(v: T) -> T {
    // Split by sign so neither branch overflows exp.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Grouped elementwise maximum.
///
/// Row `r` of `rows` belongs to group `groups[r]`, or is masked out when the
/// entry is `None`. Returns a `n_groups × cols` tensor of per-group maxima and,
/// for every output coordinate, the index of the winning row. Ties resolve to
/// the lowest row index.
pub fn masked_max<T: Scalar>(
    rows: &Tensor<T>,
    groups: &[Option<usize>],
    n_groups: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if groups.len() != rows.rows() {
        return Err(Error::shape(
            "masked_max",
            format!("{} group ids for {} rows", groups.len(), rows.rows()),
        ));
    }
    let c = rows.cols();
    let mut out = Tensor::full(&[n_groups, c], T::neg_infinity());
    let mut arg = vec![usize::MAX; n_groups * c];
    for (r, g) in groups.iter().enumerate() {
        let Some(g) = *g else { continue };
        let src = rows.row(r);
        let dst = &mut out.data[g * c..(g + 1) * c];
        let idx = &mut arg[g * c..(g + 1) * c];
        for j in 0..c {
            if idx[j] == usize::MAX || src[j] > dst[j] {
                dst[j] = src[j];
                idx[j] = r;
            }
        }
    }
    if let Some(pos) = arg.iter().position(|&a| a == usize::MAX) {
        return Err(Error::EmptyGroup { group: pos / c.max(1) });
    }
    Ok((out, arg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_value_count() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn activations() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(&Tensor::vector(vec![0.0f64])).data(), &[0.5]);
        let s = sigmoid(&Tensor::vector(vec![3.0f64.ln()])).item();
        assert!((s - 0.75).abs() < 1e-15);
        // large magnitudes stay finite
        let big = sigmoid(&Tensor::vector(vec![-800.0f64, 800.0]));
        assert_eq!(big.data(), &[0.0, 1.0]);
    }

    #[test]
    fn masked_max_examples() {
        let rows = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap();
        let (m, arg) = masked_max(&rows, &[Some(0), Some(0)], 1).unwrap();
        assert_eq!(m.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);

        let (m, _) = masked_max(&rows, &[None, Some(0)], 1).unwrap();
        assert_eq!(m.data(), &[3.0, 2.0]);

        let tie = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (_, arg) = masked_max(&tie, &[Some(0), Some(0)], 1).unwrap();
        assert_eq!(arg, vec![0, 1]);
    }

    #[test]
    fn masked_max_rejects_empty_group() {
        let rows = Tensor::from_rows(&[vec![1.0f64]]).unwrap();
        let err = masked_max(&rows, &[Some(0)], 2).unwrap_err();
        assert!(matches!(err, Error::EmptyGroup { group: 1 }));
    }

    #[test]
    fn matmul_t_matches_naive() {
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::matrix(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let y = x.matmul_t(&w).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[-2.0, 3.0, -2.0, 7.5]);
        assert!(x.matmul_t(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn f32_gemm_dispatch() {
        let x = Tensor::<f32>::matrix(1, 2, vec![2.0, 3.0]).unwrap();
        let w = Tensor::<f32>::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(x.matmul_t(&w).unwrap().item(), 5.0);
    }
}
