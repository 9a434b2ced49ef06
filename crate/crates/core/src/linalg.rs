//! Dense vector and matrix containers with the finiteness contract enforced
//! at construction.

use std::ops::Deref;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_finite<'a, T: Scalar>(values: impl IntoIterator<Item = &'a T>) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::domain(format!("entry {i} is not finite ({v})")));
        }
    }
    Ok(())
}

/// Non-empty vector of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector<T>(Vec<T>);

impl<T: Scalar> Vector<T> {
    pub fn new(entries: Vec<T>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("vector must have at least one entry"));
        }
        check_finite(&entries)?;
        Ok(Vector(entries))
    }

    pub fn from_f64(entries: &[f64]) -> Result<Self> {
        Self::new(entries.iter().map(|&x| T::of(x)).collect())
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "vector must have at least one entry");
        Vector(vec![T::zero(); n])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn view(&self) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.0[..])
    }

    pub fn to_array(&self) -> Array1<T> {
        Array1::from(self.0.clone())
    }

    pub fn dot(&self, other: &[T]) -> T {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(other)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn sub(&self, other: &Vector<T>) -> Vector<T> {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }

    pub fn add(&self, other: &Vector<T>) -> Vector<T> {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect())
    }

    pub fn scale(&self, c: T) -> Vector<T> {
        Vector(self.0.iter().map(|&a| a * c).collect())
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|v| !v.is_zero()).count()
    }

    pub(crate) fn from_vec_unchecked(entries: Vec<T>) -> Self {
        debug_assert!(!entries.is_empty());
        Vector(entries)
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// `n1 x n2` matrix of finite reals. Columns are the objects most of the
/// library reasons about: a layer computes `W^T x`, so column `j` holds the
/// incoming weights of unit `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    data: Array2<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::domain(format!(
                "matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        check_finite(data.iter())?;
        Ok(DenseMatrix {
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// Builds a matrix from row-major storage.
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<T>) -> Result<Self> {
        Error::check_dim("matrix storage", rows * cols, entries.len())?;
        let data = Array2::from_shape_vec((rows, cols), entries)
            .map_err(|e| Error::domain(e.to_string()))?;
        Self::new(data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut entries = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            Error::check_dim("matrix row", n_cols, row.len())?;
            entries.extend(row.iter().map(|&x| T::of(x)));
        }
        Self::from_row_major(n_rows, n_cols, entries)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        DenseMatrix {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix must be non-empty");
        DenseMatrix {
            data: Array2::eye(n),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[[row, col]]
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_array(self) -> Array2<T> {
        self.data
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<T> {
        self.data.iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vector<T> {
        Vector::from_vec_unchecked(self.data.column(j).to_vec())
    }

    pub fn columns(&self) -> impl Iterator<Item = ArrayView1<'_, T>> {
        self.data.axis_iter(Axis(1))
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        self.data.column_mut(j).assign(&ArrayView1::from(values));
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> DenseMatrix<T> {
        DenseMatrix {
            data: self.data.mapv(f),
        }
    }

    pub fn sub(&self, other: &DenseMatrix<T>) -> DenseMatrix<T> {
        DenseMatrix {
            data: &self.data - &other.data,
        }
    }

    pub fn scale(&self, c: T) -> DenseMatrix<T> {
        self.map(|v| v * c)
    }

    /// `W^T x`, the pre-activation of a layer.
    pub fn transpose_mul(&self, x: &[T]) -> Result<Vector<T>> {
        Error::check_dim("transpose_mul input", self.rows(), x.len())?;
        let out = self.data.t().dot(&ArrayView1::from(x));
        Ok(Vector::from_vec_unchecked(out.to_vec()))
    }

    pub fn count_nonzero_columns(&self) -> usize {
        self.columns()
            .filter(|c| c.iter().any(|v| !v.is_zero()))
            .count()
    }

    pub fn max_column_nonzeros(&self) -> usize {
        self.columns()
            .map(|c| c.iter().filter(|v| !v.is_zero()).count())
            .max()
            .unwrap_or(0)
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            data: self.data.mapv(|v| U::of(v.as_f64())),
        }
    }

    pub(crate) fn array_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }
}
