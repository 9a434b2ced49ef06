//! Effective sparsity metrics and best s-term truncation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};
use crate::norms::{column_l1_norms, half_quasi_norm, l1_norm, norm_1_1, norm_1_inf};
use crate::scalar::Scalar;

/// `||v||_{1/2} / ||v||_1`, a value in `[1, n]`. The zero vector maps to 1.
pub fn effective_sparsity<T: Scalar>(v: &[T]) -> T {
    let l1 = l1_norm(v);
    if l1.is_zero() {
        return T::one();
    }
    half_quasi_norm(v) / l1
}

/// `||W||_{1,1} / ||W||_{1,inf}`, a value in `[1, n2]`. The zero matrix maps to 1.
pub fn effective_joint_sparsity<T: Scalar>(w: &DenseMatrix<T>) -> T {
    let max_col = norm_1_inf(w);
    if max_col.is_zero() {
        return T::one();
    }
    norm_1_1(w) / max_col
}

/// Largest effective sparsity over the columns of `w`.
pub fn max_column_effective_sparsity<T: Scalar>(w: &DenseMatrix<T>) -> T {
    w.columns().fold(T::one(), |acc, c| {
        let s = match c.as_slice() {
            Some(slice) => effective_sparsity(slice),
            None => effective_sparsity(&c.to_vec()),
        };
        acc.max(s)
    })
}

/// Indices of the `s` largest-magnitude values; ties go to the lower index.
pub(crate) fn top_indices<T: Scalar>(magnitudes: &[T], s: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&a, &b| {
        magnitudes[b]
            .partial_cmp(&magnitudes[a])
            .expect("finite magnitudes")
    });
    order.truncate(s);
    order
}

fn check_budget(s: usize, n: usize, what: &str) -> Result<()> {
    if s == 0 || s > n {
        return Err(Error::domain(format!(
            "{what} budget s = {s} must lie in [1, {n}]"
        )));
    }
    Ok(())
}

/// Keeps the `s` largest-magnitude entries of `v` and zeroes the rest.
///
/// This is the minimiser of both `||v - z||_1` and `||v - z||_inf` over
/// `s`-sparse `z`, and satisfies `||v - z||_1 <= ||v||_{1/2} / (4s)` and
/// `||v - z||_inf <= ||v||_1 / s`.
pub fn truncate_top_s<T: Scalar>(v: &[T], s: usize) -> Result<Vector<T>> {
    check_budget(s, v.len(), "entry")?;
    let magnitudes: Vec<T> = v.iter().map(|x| x.abs()).collect();
    let mut out = vec![T::zero(); v.len()];
    for i in top_indices(&magnitudes, s) {
        out[i] = v[i];
    }
    Vector::new(out)
}

/// Zeroes every column of `w` except the `s` with largest l1 norm, so that
/// `||W - W_hat||_{1,inf} <= ||W||_{1,1} / s`.
pub fn truncate_top_columns<T: Scalar>(w: &DenseMatrix<T>, s: usize) -> Result<DenseMatrix<T>> {
    check_budget(s, w.cols(), "column")?;
    let keep = top_indices(&column_l1_norms(w), s);
    let mut out = DenseMatrix::zeros(w.rows(), w.cols());
    for j in keep {
        out.set_column(j, &w.column(j));
    }
    Ok(out)
}

/// Per-layer `(s1_bar, s2_bar)`: the worst column effective sparsity and the
/// effective joint sparsity of each weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub layers: Vec<LayerSparsity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub column: f64,
    pub joint: f64,
}

impl LayerSparsity {
    pub fn of<T: Scalar>(w: &DenseMatrix<T>) -> Self {
        LayerSparsity {
            column: max_column_effective_sparsity(w).as_f64(),
            joint: effective_joint_sparsity(w).as_f64(),
        }
    }

    /// `sqrt(s1_bar * s2_bar)`, the weight a layer receives in the error schedule.
    pub fn weight(&self) -> f64 {
        (self.column * self.joint).sqrt()
    }
}

impl SparsityProfile {
    pub fn new(layers: Vec<LayerSparsity>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("sparsity profile needs at least one layer"));
        }
        for (j, l) in layers.iter().enumerate() {
            if !(l.column >= 1.0 && l.joint >= 1.0) {
                return Err(Error::domain(format!(
                    "layer {j}: effective sparsities must be >= 1, got ({}, {})",
                    l.column, l.joint
                )));
            }
        }
        Ok(SparsityProfile { layers })
    }

    pub fn of_layers<'a, T: Scalar>(layers: impl IntoIterator<Item = &'a DenseMatrix<T>>) -> Self {
        SparsityProfile {
            layers: layers.into_iter().map(LayerSparsity::of).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `sum_j sqrt(s1_bar^j s2_bar^j)`.
    pub fn total_weight(&self) -> f64 {
        self.layers.iter().map(LayerSparsity::weight).sum()
    }
}
