//! Layer compression: drop weak columns, keep the heaviest entries of each
//! surviving column, quantize onto a grid. Also evaluates the log-cardinality
//! of the resulting covering set.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::linear_model::clamp_budget;
use crate::norms::norm_1_inf;
use crate::scalar::{round_to_grid, Scalar};
use crate::sparsity::{
    effective_joint_sparsity, max_column_effective_sparsity, truncate_top_columns, truncate_top_s,
};

/// Budgets for compressing one matrix to `||W - W_hat||_{1,inf} <= gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan<T> {
    pub gamma: T,
    /// Nonzeros kept per surviving column.
    pub s1: usize,
    /// Surviving columns.
    pub s2: usize,
    /// Grid pitch `2 gamma / (3 s1)`.
    pub quant_step: T,
    /// Worst column effective sparsity of the planned matrix.
    pub column_sparsity: T,
    /// Effective joint sparsity of the planned matrix.
    pub joint_sparsity: T,
    /// `||W||_{1,inf}` of the planned matrix.
    pub norm_1_inf: T,
}

impl<T: Scalar> CompressionPlan<T> {
    /// `||W||_{1,inf}^2 s1_bar s2_bar / gamma^2`, the order of the
    /// log-cardinality once logarithmic factors are dropped.
    pub fn soft_order_scaling(&self) -> f64 {
        let n = self.norm_1_inf.as_f64();
        let g = self.gamma.as_f64();
        n * n * self.column_sparsity.as_f64() * self.joint_sparsity.as_f64() / (g * g)
    }
}

/// Natural log of the covering-set size, split into its three factors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CapacityCount {
    /// `s2 ln(e n2 / s2)`: which columns survive.
    pub column_choice: f64,
    /// `s1 s2 ln(e n1 / s1)`: which entries survive in each column.
    pub entry_choice: f64,
    /// `s1 s2 ln(1 + 6 / gamma)`: covering of the surviving entries.
    pub grid: f64,
    pub log_card: f64,
}

impl CapacityCount {
    fn from_terms(column_choice: f64, entry_choice: f64, grid: f64) -> Self {
        CapacityCount {
            column_choice,
            entry_choice,
            grid,
            log_card: column_choice + entry_choice + grid,
        }
    }
}

impl std::ops::Add for CapacityCount {
    type Output = CapacityCount;

    fn add(self, rhs: CapacityCount) -> CapacityCount {
        CapacityCount::from_terms(
            self.column_choice + rhs.column_choice,
            self.entry_choice + rhs.entry_choice,
            self.grid + rhs.grid,
        )
    }
}

impl std::iter::Sum for CapacityCount {
    fn sum<I: Iterator<Item = CapacityCount>>(iter: I) -> Self {
        iter.fold(CapacityCount::default(), |a, b| a + b)
    }
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<()> {
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(Error::domain(format!("gamma must be a positive finite real, got {gamma}")));
    }
    Ok(())
}

/// Chooses `s1 = ceil(3 ||W||_{1,inf} s1_bar / (4 gamma))` and
/// `s2 = ceil(3 ||W||_{1,inf} s2_bar / gamma)`, both clamped to the matrix
/// dimensions, and the grid pitch `2 gamma / (3 s1)`.
pub fn plan_compression<T: Scalar>(w: &DenseMatrix<T>, gamma: T) -> Result<CompressionPlan<T>> {
    check_gamma(gamma)?;
    let norm = norm_1_inf(w);
    let column_sparsity = max_column_effective_sparsity(w);
    let joint_sparsity = effective_joint_sparsity(w);
    let three = T::of(3.0);
    let s1 = clamp_budget(
        (three * norm * column_sparsity / (T::of(4.0) * gamma)).ceil(),
        w.rows(),
    );
    let s2 = clamp_budget((three * norm * joint_sparsity / gamma).ceil(), w.cols());
    Ok(CompressionPlan {
        gamma,
        s1,
        s2,
        quant_step: T::of(2.0) * gamma / (three * T::of(s1 as f64)),
        column_sparsity,
        joint_sparsity,
        norm_1_inf: norm,
    })
}

/// `s2 ln(e n2/s2) + s1 s2 ln(e n1/s1) + s1 s2 ln(1 + 6/gamma)`.
pub fn capacity_count(s1: usize, s2: usize, n1: usize, n2: usize, gamma: f64) -> Result<CapacityCount> {
    if s1 == 0 || s1 > n1 || s2 == 0 || s2 > n2 {
        return Err(Error::domain(format!(
            "budgets (s1, s2) = ({s1}, {s2}) must lie in [1, {n1}] x [1, {n2}]"
        )));
    }
    check_gamma(gamma)?;
    let (s1f, s2f) = (s1 as f64, s2 as f64);
    Ok(CapacityCount::from_terms(
        s2f * (E * n2 as f64 / s2f).ln(),
        s1f * s2f * (E * n1 as f64 / s1f).ln(),
        s1f * s2f * (1.0 + 6.0 / gamma).ln(),
    ))
}

/// Log-cardinality of the family a plan compresses into.
pub fn plan_capacity<T: Scalar>(plan: &CompressionPlan<T>, n1: usize, n2: usize) -> Result<CapacityCount> {
    capacity_count(plan.s1, plan.s2, n1, n2, plan.gamma.as_f64())
}

/// Every stage of a compression run.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixCompression<T> {
    pub plan: CompressionPlan<T>,
    /// After dropping all but the `s2` heaviest columns.
    pub column_truncated: DenseMatrix<T>,
    /// After keeping the `s1` largest entries of each column.
    pub entry_truncated: DenseMatrix<T>,
    /// After grid rounding.
    pub compressed: DenseMatrix<T>,
    pub capacity: CapacityCount,
}

/// Applies a fixed plan. Idempotent: a matrix already in the plan's family
/// and on its grid is returned unchanged.
pub fn compress_with_plan<T: Scalar>(
    w: &DenseMatrix<T>,
    plan: &CompressionPlan<T>,
) -> Result<MatrixCompression<T>> {
    let column_truncated = truncate_top_columns(w, plan.s2)?;
    let mut entry_truncated = column_truncated.clone();
    for j in 0..w.cols() {
        let col = column_truncated.column(j);
        if col.count_nonzero() > plan.s1 {
            entry_truncated.set_column(j, &truncate_top_s(&col, plan.s1)?);
        }
    }
    let step = plan.quant_step;
    let compressed = entry_truncated.map(|v| round_to_grid(v, step));
    let capacity = plan_capacity(plan, w.rows(), w.cols())?;
    Ok(MatrixCompression {
        plan: *plan,
        column_truncated,
        entry_truncated,
        compressed,
        capacity,
    })
}

/// Plans and compresses `w`, which must satisfy `||W||_{1,inf} <= 1`.
pub fn matrix_compress_detailed<T: Scalar>(
    w: &DenseMatrix<T>,
    gamma: T,
) -> Result<MatrixCompression<T>> {
    check_gamma(gamma)?;
    let norm = norm_1_inf(w);
    let slack = T::of(64.0) * T::epsilon();
    if norm > T::one() + slack {
        return Err(Error::precondition(format!(
            "matrix compression requires ||W||_(1,inf) <= 1 but got {norm}; rebalance the network first"
        )));
    }
    let plan = plan_compression(w, gamma)?;
    compress_with_plan(w, &plan)
}

/// Compresses `w` so that `||W - W_hat||_{1,inf} <= gamma`, returning the
/// compressed matrix and the log-cardinality of its family.
pub fn matrix_compress<T: Scalar>(
    w: &DenseMatrix<T>,
    gamma: T,
) -> Result<(DenseMatrix<T>, CapacityCount)> {
    matrix_compress_detailed(w, gamma).map(|c| (c.compressed, c.capacity))
}

/// True when `w` has at most `s2` nonzero columns, at most `s1` nonzeros per
/// column and every entry an integer multiple of the plan's pitch.
pub fn in_plan_family<T: Scalar>(w: &DenseMatrix<T>, plan: &CompressionPlan<T>) -> bool {
    w.count_nonzero_columns() <= plan.s2
        && w.max_column_nonzeros() <= plan.s1
        && w.as_array().iter().all(|&v| {
            let k = v / plan.quant_step;
            (k - k.round()).abs() <= T::of(1e-6) * k.abs().max(T::one())
        })
}
