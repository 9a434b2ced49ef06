//! Vector l_p (quasi-)norms, mixed matrix norms and the l_inf operator norm.
//!
//! All reductions run left to right over storage order so that repeated
//! evaluations (and the two routes to the `(1, inf)` norm) agree bit for bit.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Order of an l_p norm. Infinity is an explicit variant rather than a large
/// float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormOrder<T> {
    Finite(T),
    Infinity,
}

impl<T: Scalar> NormOrder<T> {
    pub fn half() -> Self {
        NormOrder::Finite(T::of(0.5))
    }

    pub fn one() -> Self {
        NormOrder::Finite(T::one())
    }

    pub fn two() -> Self {
        NormOrder::Finite(T::of(2.0))
    }

    fn validate(self) -> Result<Self> {
        match self {
            NormOrder::Finite(p) if !(p > T::zero()) || !p.is_finite() => {
                Err(Error::domain(format!("norm order must be positive, got {p}")))
            }
            other => Ok(other),
        }
    }
}

/// `sum |v_i|`.
pub fn l1_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc + x.abs())
}

/// `max |v_i|`.
pub fn linf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// The `1/2` quasi-norm, evaluated as `(sum sqrt|v_i|)^2`.
pub fn half_quasi_norm<T: Scalar>(v: &[T]) -> T {
    let root_sum = v.iter().fold(T::zero(), |acc, x| acc + x.abs().sqrt());
    root_sum * root_sum
}

/// `(sum |v_i|^p)^(1/p)`; a quasi-norm for `p < 1`.
pub fn lp_norm<T: Scalar>(v: &[T], p: NormOrder<T>) -> Result<T> {
    Ok(match p.validate()? {
        NormOrder::Infinity => linf_norm(v),
        NormOrder::Finite(p) if p == T::of(0.5) => half_quasi_norm(v),
        NormOrder::Finite(p) if p == T::one() => l1_norm(v),
        NormOrder::Finite(p) if p == T::of(2.0) => v
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt(),
        NormOrder::Finite(p) => v
            .iter()
            .fold(T::zero(), |acc, x| acc + x.abs().powf(p))
            .powf(p.recip()),
    })
}

/// l1 norm of every column, in column order.
pub fn column_l1_norms<T: Scalar>(w: &DenseMatrix<T>) -> Vec<T> {
    let a = w.view();
    (0..w.cols())
        .map(|j| (0..w.rows()).fold(T::zero(), |acc, i| acc + a[[i, j]].abs()))
        .collect()
}

/// `||(||a_1||_p, ..., ||a_n2||_p)||_q` over the columns `a_j` of `w`.
pub fn mixed_norm<T: Scalar>(w: &DenseMatrix<T>, p: NormOrder<T>, q: NormOrder<T>) -> Result<T> {
    let p = p.validate()?;
    let q = q.validate()?;
    let column_norms = if p == NormOrder::one() {
        column_l1_norms(w)
    } else {
        w.columns()
            .map(|c| lp_norm(&c.to_vec(), p))
            .collect::<Result<Vec<_>>>()?
    };
    lp_norm(&column_norms, q)
}

/// `||W||_{1,inf}`: the largest column l1 norm.
pub fn norm_1_inf<T: Scalar>(w: &DenseMatrix<T>) -> T {
    linf_norm(&column_l1_norms(w))
}

/// `||W||_{1,1}`: the sum of all magnitudes, accumulated column by column.
pub fn norm_1_1<T: Scalar>(w: &DenseMatrix<T>) -> T {
    l1_norm(&column_l1_norms(w))
}

/// `sup_{||eta||_inf <= 1} ||W^T eta||_inf`, computed as the largest l1 norm of
/// a row of `W^T`.
pub fn linf_operator_norm<T: Scalar>(w: &DenseMatrix<T>) -> T {
    let wt = w.view().reversed_axes();
    wt.rows().into_iter().fold(T::zero(), |best, row| {
        best.max(row.iter().fold(T::zero(), |acc, x| acc + x.abs()))
    })
}
