//! Fully connected ReLU networks `x^i = phi(W^i^T x^(i-1))`, `f(x) = x^d`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};
use crate::matrix_compress::{matrix_compress_detailed, CapacityCount, MatrixCompression};
use crate::norms::{linf_norm, norm_1_inf};
use crate::rng;
use crate::scalar::Scalar;
use crate::sparsity::SparsityProfile;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative, with the ReLU subgradient at 0 taken as 0.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Ordered weight matrices `W^1 ... W^d`. Hidden layers always use ReLU; the
/// last layer uses `final_activation` (ReLU gives the analysed form, identity
/// the trainable variant).
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredNetwork<T> {
    layers: Vec<DenseMatrix<T>>,
    final_activation: Activation,
}

/// Activations `x^0 ... x^d` of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace<T> {
    pub activations: Vec<Vector<T>>,
}

/// Per-layer inputs and pre-activations of a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchCache<T> {
    /// `inputs[i]` feeds layer `i`; `inputs[0]` is the batch itself.
    pub inputs: Vec<Array2<T>>,
    pub pre_activations: Vec<Array2<T>>,
    pub scores: Array2<T>,
}

impl<T: Scalar> LayeredNetwork<T> {
    pub fn new(layers: Vec<DenseMatrix<T>>, final_activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            Error::check_dim("layer chain", pair[0].cols(), pair[1].rows())?;
        }
        Ok(LayeredNetwork {
            layers,
            final_activation,
        })
    }

    pub fn layers(&self) -> &[DenseMatrix<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseMatrix<T>] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].cols()
    }

    /// Layer widths `n^0, n^1, ..., n^d`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseMatrix::cols))
            .collect()
    }

    pub fn final_activation(&self) -> Activation {
        self.final_activation
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.final_activation
        } else {
            Activation::Relu
        }
    }

    pub fn with_final_activation(&self, final_activation: Activation) -> Self {
        LayeredNetwork {
            layers: self.layers.clone(),
            final_activation,
        }
    }

    /// The network with ReLU applied on every layer, including the last.
    pub fn analysed_form(&self) -> Self {
        self.with_final_activation(Activation::Relu)
    }

    pub fn cast<U: Scalar>(&self) -> LayeredNetwork<U> {
        LayeredNetwork {
            layers: self.layers.iter().map(DenseMatrix::cast).collect(),
            final_activation: self.final_activation,
        }
    }

    pub fn sparsity_profile(&self) -> SparsityProfile {
        SparsityProfile::of_layers(&self.layers)
    }

    pub fn layer_norms(&self) -> Vec<T> {
        self.layers.iter().map(norm_1_inf).collect()
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vector<T>, LayerTrace<T>)> {
        Error::check_dim("network input", self.input_dim(), x.len())?;
        let mut activations = Vec::with_capacity(self.depth() + 1);
        activations.push(Vector::from_vec_unchecked(x.to_vec()));
        for (i, w) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let z = w.transpose_mul(&activations[i])?;
            activations.push(Vector::from_vec_unchecked(
                z.iter().map(|&v| act.apply(v)).collect(),
            ));
        }
        let out = activations[self.depth()].clone();
        Ok((out, LayerTrace { activations }))
    }

    pub fn scores(&self, x: &[T]) -> Result<Vector<T>> {
        self.forward(x).map(|(s, _)| s)
    }

    /// Scores for a batch laid out one sample per row.
    pub fn forward_batch(&self, batch: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Error::check_dim("network batch input", self.input_dim(), batch.ncols())?;
        let mut a = batch.to_owned();
        for (i, w) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            a = a.dot(w.as_array());
            a.mapv_inplace(|v| act.apply(v));
        }
        Ok(a)
    }

    pub fn forward_batch_cached(&self, batch: ArrayView2<'_, T>) -> Result<BatchCache<T>> {
        Error::check_dim("network batch input", self.input_dim(), batch.ncols())?;
        let mut inputs = Vec::with_capacity(self.depth());
        let mut pre_activations = Vec::with_capacity(self.depth());
        let mut a = batch.to_owned();
        for (i, w) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let z = a.dot(w.as_array());
            inputs.push(a);
            a = z.mapv(|v| act.apply(v));
            pre_activations.push(z);
        }
        Ok(BatchCache {
            inputs,
            pre_activations,
            scores: a,
        })
    }

    /// Back-propagates `d loss / d scores` through a cached pass. Returns the
    /// weight gradients (when requested) and the input gradient.
    pub fn backward(
        &self,
        cache: &BatchCache<T>,
        score_grad: Array2<T>,
        want_weights: bool,
    ) -> (Vec<Array2<T>>, Array2<T>) {
        let mut grad = score_grad;
        let mut weight_grads = Vec::with_capacity(if want_weights { self.depth() } else { 0 });
        for i in (0..self.depth()).rev() {
            let act = self.activation(i);
            if act == Activation::Relu {
                grad.zip_mut_with(&cache.pre_activations[i], |g, &z| {
                    *g = *g * act.derivative(z);
                });
            }
            if want_weights {
                weight_grads.push(cache.inputs[i].t().dot(&grad));
            }
            grad = grad.dot(&self.layers[i].as_array().t());
        }
        weight_grads.reverse();
        (weight_grads, grad)
    }

    /// Classification margin `[f(x)]_y - max_{j != y} [f(x)]_j`.
    pub fn margin(&self, x: &[T], y: usize) -> Result<T> {
        let s = self.scores(x)?;
        margin_of_scores(&s, y)
    }

    /// Divides every layer by its `(1, inf)` norm. Returns the rebalanced
    /// network and `scale = prod_i ||W^i||_{1,inf}`, so that
    /// `f(x) = scale * f_rebalanced(x)`.
    pub fn rebalance(&self) -> Result<(LayeredNetwork<T>, T)> {
        let mut scale = T::one();
        let mut layers = Vec::with_capacity(self.depth());
        for (i, w) in self.layers.iter().enumerate() {
            let n = norm_1_inf(w);
            if n.is_zero() {
                return Err(Error::precondition(format!(
                    "layer {} is identically zero; every margin is 0 and the network cannot be rebalanced",
                    i + 1
                )));
            }
            scale = scale * n;
            layers.push(w.scale(n.recip()));
        }
        Ok((
            LayeredNetwork {
                layers,
                final_activation: self.final_activation,
            },
            scale,
        ))
    }

    pub fn is_rebalanced(&self, tol: T) -> bool {
        self.layer_norms().iter().all(|&n| n <= T::one() + tol)
    }
}

/// `[s]_y - max_{j != y} [s]_j`.
pub fn margin_of_scores<T: Scalar>(scores: &[T], y: usize) -> Result<T> {
    if y >= scores.len() {
        return Err(Error::domain(format!(
            "class index {y} out of range for {} scores",
            scores.len()
        )));
    }
    if scores.len() < 2 {
        return Err(Error::domain("margin needs at least two classes"));
    }
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &v)| v)
        .fold(T::neg_infinity(), T::max);
    Ok(scores[y] - runner_up)
}

/// Index of the largest score other than `y` (first on ties).
pub(crate) fn runner_up<T: Scalar>(scores: &[T], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in scores.iter().enumerate() {
        if j != y && (best == usize::MAX || v > scores[best]) {
            best = j;
        }
    }
    best
}

/// Cumulative error levels `eps^0 <= ... <= eps^d` and per-layer budgets
/// `gamma_i = (eps^i - eps^(i-1)) / (1 + eps + eps^(i-1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSchedule {
    pub gamma: f64,
    pub eps: f64,
    pub levels: Vec<f64>,
    pub budgets: Vec<f64>,
}

pub(crate) fn check_margin_attack(gamma: f64, eps: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!("gamma must be positive and finite, got {gamma}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::domain(format!("eps must be >= 0, got {eps}")));
    }
    if !(eps < gamma / 4.0) {
        return Err(Error::precondition(format!(
            "need eps < gamma / 4 but eps = {eps}, gamma = {gamma} (gamma / 4 = {})",
            gamma / 4.0
        )));
    }
    Ok(())
}

/// Splits the total output error `gamma/2 - 2 eps` across layers in
/// proportion to `sqrt(s1_bar^i s2_bar^i)`, starting from `eps^0 = 2 eps`.
/// The last level is pinned to exactly `gamma / 2`.
pub fn error_schedule(profile: &SparsityProfile, gamma: f64, eps: f64) -> Result<ErrorSchedule> {
    check_margin_attack(gamma, eps)?;
    if profile.depth() == 0 {
        return Err(Error::domain("empty sparsity profile"));
    }
    let total = profile.total_weight();
    let span = gamma / 2.0 - 2.0 * eps;
    let d = profile.depth();
    let mut levels = Vec::with_capacity(d + 1);
    levels.push(2.0 * eps);
    for (i, layer) in profile.layers.iter().enumerate() {
        let prev = levels[i];
        let next = if i + 1 == d {
            gamma / 2.0
        } else {
            prev + layer.weight() / total * span
        };
        levels.push(next);
    }
    let budgets = (1..=d)
        .map(|i| (levels[i] - levels[i - 1]) / (1.0 + eps + levels[i - 1]))
        .collect();
    Ok(ErrorSchedule {
        gamma,
        eps,
        levels,
        budgets,
    })
}

/// Result of compressing every layer with its scheduled budget.
#[derive(Clone, Debug)]
pub struct NetworkCompression<T> {
    pub network: LayeredNetwork<T>,
    pub schedule: ErrorSchedule,
    pub layers: Vec<MatrixCompression<T>>,
    pub capacity: CapacityCount,
}

/// Compresses a rebalanced network so that, for any input deviation of
/// l_inf size at most `2 eps`, outputs move by at most `gamma / 2`.
pub fn compress_network<T: Scalar>(
    net: &LayeredNetwork<T>,
    gamma: f64,
    eps: f64,
) -> Result<NetworkCompression<T>> {
    check_margin_attack(gamma, eps)?;
    let tol = T::of(64.0) * T::epsilon();
    if !net.is_rebalanced(tol) {
        return Err(Error::precondition(format!(
            "network must be rebalanced (every ||W^i||_(1,inf) <= 1), layer norms are {:?}",
            net.layer_norms()
        )));
    }
    let schedule = error_schedule(&net.sparsity_profile(), gamma, eps)?;
    let layers = net
        .layers()
        .iter()
        .zip(&schedule.budgets)
        .map(|(w, &g)| matrix_compress_detailed(w, T::of(g)))
        .collect::<Result<Vec<_>>>()?;
    let capacity = layers.iter().map(|c| c.capacity).sum();
    let network = LayeredNetwork {
        layers: layers.iter().map(|c| c.compressed.clone()).collect(),
        final_activation: net.final_activation,
    };
    Ok(NetworkCompression {
        network,
        schedule,
        layers,
        capacity,
    })
}

/// Left- and right-hand sides of the two layer perturbation inequalities:
/// `||phi(W^T x) - phi(W^T (x + eta))||_inf <= ||W||_{1,inf} ||eta||_inf` and
/// `||phi(W^T x) - phi(W_hat^T x)||_inf <= ||W - W_hat||_{1,inf} ||x||_inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzCheck<T> {
    pub input_shift: T,
    pub input_shift_bound: T,
    pub weight_shift: T,
    pub weight_shift_bound: T,
    /// `max(||W||, ||W_hat||)_{1,inf} (||x||_inf + ||eta||_inf)`, the size of
    /// the products being compared; rounding error scales with it.
    pub magnitude: T,
}

impl<T: Scalar> LipschitzCheck<T> {
    /// Both inequalities hold up to `ulps` rounding units of `magnitude`.
    pub fn holds(&self, ulps: f64) -> bool {
        let slack = T::of(ulps) * T::epsilon() * self.magnitude + T::min_positive_value();
        self.input_shift <= self.input_shift_bound + slack
            && self.weight_shift <= self.weight_shift_bound + slack
    }
}

pub fn lipschitz_layer_check<T: Scalar>(
    w: &DenseMatrix<T>,
    w_hat: &DenseMatrix<T>,
    x: &[T],
    eta: &[T],
    activation: Activation,
) -> Result<LipschitzCheck<T>> {
    Error::check_dim("compressed layer rows", w.rows(), w_hat.rows())?;
    Error::check_dim("compressed layer cols", w.cols(), w_hat.cols())?;
    Error::check_dim("perturbation", x.len(), eta.len())?;
    let phi = |v: Vector<T>| -> Vec<T> { v.iter().map(|&z| activation.apply(z)).collect() };
    let shifted: Vec<T> = x.iter().zip(eta).map(|(&a, &b)| a + b).collect();
    let base = phi(w.transpose_mul(x)?);
    let moved = phi(w.transpose_mul(&shifted)?);
    let swapped = phi(w_hat.transpose_mul(x)?);
    let diff = |a: &[T], b: &[T]| -> T {
        a.iter()
            .zip(b)
            .fold(T::zero(), |acc, (&p, &q)| acc.max((p - q).abs()))
    };
    let check = LipschitzCheck {
        input_shift: diff(&base, &moved),
        input_shift_bound: norm_1_inf(w) * linf_norm(eta),
        weight_shift: diff(&base, &swapped),
        weight_shift_bound: norm_1_inf(&w.sub(w_hat)) * linf_norm(x),
        magnitude: norm_1_inf(w).max(norm_1_inf(w_hat)) * (linf_norm(x) + linf_norm(eta)),
    };
    debug_assert!(check.holds(1e3), "layer inequalities violated: {check:?}");
    Ok(check)
}

/// Largest output and margin gaps between two networks over random probes
/// `x ~ U[-1, 1]^n` shifted by a shared `eta ~ U[-eps, eps]^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeAudit {
    pub probes: usize,
    pub eps: f64,
    pub max_output_deviation: f64,
    pub max_margin_deviation: f64,
}

pub fn probe_deviation<T: Scalar>(
    original: &LayeredNetwork<T>,
    compressed: &LayeredNetwork<T>,
    probes: usize,
    eps: f64,
    seed: u64,
) -> Result<ProbeAudit> {
    Error::check_dim("probe widths", original.depth(), compressed.depth())?;
    Error::check_dim("probe input", original.input_dim(), compressed.input_dim())?;
    Error::check_dim("probe output", original.output_dim(), compressed.output_dim())?;
    let n = original.input_dim();
    let mut out = 0.0f64;
    let mut margin = 0.0f64;
    for p in 0..probes {
        let mut r = rng::stream(seed, p as u64);
        let x: Vec<T> = (0..n)
            .map(|_| {
                let base = r.random_range(-1.0..=1.0);
                let shift = if eps > 0.0 { r.random_range(-eps..=eps) } else { 0.0 };
                T::of(base + shift)
            })
            .collect();
        let a = original.scores(&x)?;
        let b = compressed.scores(&x)?;
        out = out.max(linf_norm(&a.sub(&b)).as_f64());
        if a.len() >= 2 {
            for y in 0..a.len() {
                let d = margin_of_scores(&a, y)? - margin_of_scores(&b, y)?;
                margin = margin.max(d.abs().as_f64());
            }
        }
    }
    Ok(ProbeAudit {
        probes,
        eps,
        max_output_deviation: out,
        max_margin_deviation: margin,
    })
}
