//! Binary linear classifier `f_w(x) = (0, <w, x>)`: adversarial margin,
//! randomized and deterministic weight compression, and the two
//! generalization-bound evaluators built on them.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::norms::{l1_norm, linf_norm};
use crate::rng;
use crate::scalar::{round_to_grid, Scalar};
use crate::sparsity::{effective_sparsity, truncate_top_s};

/// Label of a binary problem, encoded as `{1, 2}`; the margin sign is `2y - 3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryLabel {
    One,
    Two,
}

impl BinaryLabel {
    pub fn from_code(y: u8) -> Result<Self> {
        match y {
            1 => Ok(BinaryLabel::One),
            2 => Ok(BinaryLabel::Two),
            other => Err(Error::domain(format!("binary label must be 1 or 2, got {other}"))),
        }
    }

    /// Maps a `{0, 1}` class index onto `{1, 2}`.
    pub fn from_class_index(class: usize) -> Result<Self> {
        match class {
            0 => Ok(BinaryLabel::One),
            1 => Ok(BinaryLabel::Two),
            other => Err(Error::domain(format!("binary class index must be 0 or 1, got {other}"))),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BinaryLabel::One => 1,
            BinaryLabel::Two => 2,
        }
    }

    pub fn sign<T: Scalar>(self) -> T {
        match self {
            BinaryLabel::One => -T::one(),
            BinaryLabel::Two => T::one(),
        }
    }
}

/// How the adversarial margin of a linear classifier is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginForm {
    /// `(2y - 3)(<w, x> - eps ||w||_1)`.
    #[default]
    Factored,
    /// `(2y - 3)<w, x> - eps ||w||_1`, the exact infimum over the eps-ball.
    /// Agrees with `Factored` for `y = 2`.
    Infimum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier<T> {
    weights: Vector<T>,
}

impl<T: Scalar> LinearClassifier<T> {
    pub fn new(weights: Vector<T>) -> Self {
        LinearClassifier { weights }
    }

    pub fn weights(&self) -> &Vector<T> {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Clean margin `(2y - 3)<w, x>`.
    pub fn margin(&self, x: &[T], y: BinaryLabel) -> Result<T> {
        Error::check_dim("linear margin input", self.dim(), x.len())?;
        Ok(y.sign::<T>() * self.weights.dot(x))
    }

    fn require_unit_l1_ball(&self) -> Result<()> {
        let l1 = l1_norm(&self.weights);
        let slack = T::epsilon() * T::of(self.dim() as f64);
        if l1 > T::one() + slack {
            return Err(Error::precondition(format!(
                "compression requires ||w||_1 <= 1, got {l1}"
            )));
        }
        Ok(())
    }
}

fn check_input_ball<T: Scalar>(x: &[T]) -> Result<()> {
    let m = linf_norm(x);
    if m > T::one() {
        return Err(Error::domain(format!("input must satisfy ||x||_inf <= 1, got {m}")));
    }
    Ok(())
}

/// Adversarial margin in the factored form `(2y - 3)(<w, x> - eps ||w||_1)`.
pub fn linear_adversarial_margin<T: Scalar>(
    c: &LinearClassifier<T>,
    x: &[T],
    y: BinaryLabel,
    eps: T,
) -> Result<T> {
    linear_adversarial_margin_with(c, x, y, eps, MarginForm::Factored)
}

pub fn linear_adversarial_margin_with<T: Scalar>(
    c: &LinearClassifier<T>,
    x: &[T],
    y: BinaryLabel,
    eps: T,
    form: MarginForm,
) -> Result<T> {
    if eps < T::zero() {
        return Err(Error::domain(format!("attack budget must be >= 0, got {eps}")));
    }
    Error::check_dim("linear margin input", c.dim(), x.len())?;
    check_input_ball(x)?;
    let score = c.weights.dot(x);
    let penalty = eps * l1_norm(&c.weights);
    let sign = y.sign::<T>();
    Ok(match form {
        MarginForm::Factored => sign * (score - penalty),
        MarginForm::Infimum => sign * score - penalty,
    })
}

/// Parameters of the randomized compressor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticCompressionParams<T> {
    pub gamma: T,
    pub eps: T,
    pub delta: T,
    pub seed: u64,
}

impl<T: Scalar> StochasticCompressionParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > T::zero()) {
            return Err(Error::domain(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.eps >= T::zero()) {
            return Err(Error::domain(format!("eps must be >= 0, got {}", self.eps)));
        }
        if !(self.delta > T::zero() && self.delta <= T::one()) {
            return Err(Error::domain(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        Ok(())
    }

    /// Keep-probability of an entry, capped at 1.
    pub fn keep_probability(&self, w_i: T) -> T {
        let one_eps = T::one() + self.eps;
        (w_i.abs() * one_eps * one_eps / (self.delta * self.gamma * self.gamma)).min(T::one())
    }

    /// Expected number of kept entries for a weight vector on the unit l1
    /// sphere: `(1 + eps)^2 / (delta gamma^2)`.
    pub fn expected_support(&self) -> T {
        let one_eps = T::one() + self.eps;
        one_eps * one_eps / (self.delta * self.gamma * self.gamma)
    }
}

fn sample_compressed<T: Scalar>(
    w: &[T],
    params: &StochasticCompressionParams<T>,
    rng: &mut rng::Rng,
) -> Vec<T> {
    w.iter()
        .map(|&wi| {
            let p = params.keep_probability(wi);
            // one uniform per coordinate keeps streams aligned across inputs
            let u: f64 = rng.random();
            if p.is_zero() || u >= p.as_f64() {
                T::zero()
            } else {
                wi / p
            }
        })
        .collect()
}

/// Unbiased randomized sparsification: `w_hat_i = z_i w_i / p_i` with
/// `z_i ~ Bernoulli(p_i)` and `p_i = min(1, |w_i| (1 + eps)^2 / (delta gamma^2))`.
pub fn compress_vector_stochastic<T: Scalar>(
    c: &LinearClassifier<T>,
    params: &StochasticCompressionParams<T>,
) -> Result<Vector<T>> {
    params.validate()?;
    c.require_unit_l1_ball()?;
    let mut rng = rng::seeded(params.seed);
    Ok(Vector::from_vec_unchecked(sample_compressed(&c.weights, params, &mut rng)))
}

/// Intermediate vectors of [`compress_vector_clip_round`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRoundStages<T> {
    pub clip_threshold: T,
    pub grid_pitch: T,
    pub clipped: Vector<T>,
    pub sparsified: Vector<T>,
    pub rounded: Vector<T>,
}

/// Clip small entries, sparsify at budget `gamma / 2`, then round onto a grid
/// of pitch `gamma / (2n(1 + eps))`, returning every stage.
pub fn compress_vector_clip_round_stages<T: Scalar>(
    c: &LinearClassifier<T>,
    params: &StochasticCompressionParams<T>,
) -> Result<ClipRoundStages<T>> {
    params.validate()?;
    c.require_unit_l1_ball()?;
    let n = T::of(c.dim() as f64);
    let one_eps = T::one() + params.eps;
    let two = T::of(2.0);
    let clip_threshold = params.gamma / (T::of(4.0) * n * one_eps);
    let grid_pitch = params.gamma / (two * n * one_eps);

    let clipped: Vec<T> = c
        .weights
        .iter()
        .map(|&wi| if wi.abs() >= clip_threshold { wi } else { T::zero() })
        .collect();
    let half_budget = StochasticCompressionParams {
        gamma: params.gamma / two,
        ..*params
    };
    let mut rng = rng::seeded(params.seed);
    let sparsified = sample_compressed(&clipped, &half_budget, &mut rng);
    let rounded = sparsified
        .iter()
        .map(|&v| round_to_grid(v, grid_pitch))
        .collect();
    Ok(ClipRoundStages {
        clip_threshold,
        grid_pitch,
        clipped: Vector::from_vec_unchecked(clipped),
        sparsified: Vector::from_vec_unchecked(sparsified),
        rounded: Vector::from_vec_unchecked(rounded),
    })
}

/// Randomized compression onto a discrete set: clip, sparsify, round.
pub fn compress_vector_clip_round<T: Scalar>(
    c: &LinearClassifier<T>,
    params: &StochasticCompressionParams<T>,
) -> Result<Vector<T>> {
    compress_vector_clip_round_stages(c, params).map(|s| s.rounded)
}

/// Intermediate vectors of [`compress_vector_effective_sparse`].
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveSparseStages<T> {
    pub effective_sparsity: T,
    pub budget: usize,
    pub grid_pitch: T,
    pub truncated: Vector<T>,
    pub rounded: Vector<T>,
}

/// Sparsity budget `ceil(s_bar (1 + eps) / (2 gamma))`, clamped to `[1, n]`.
pub fn effective_sparse_budget<T: Scalar>(s_bar: T, gamma: T, eps: T, n: usize) -> usize {
    let raw = (s_bar * (T::one() + eps) / (T::of(2.0) * gamma)).ceil();
    clamp_budget(raw, n)
}

pub(crate) fn clamp_budget<T: Scalar>(raw: T, n: usize) -> usize {
    if !(raw < T::of(n as f64)) {
        n
    } else {
        raw.to_usize().unwrap_or(1).clamp(1, n)
    }
}

pub fn compress_vector_effective_sparse_stages<T: Scalar>(
    c: &LinearClassifier<T>,
    gamma: T,
    eps: T,
) -> Result<EffectiveSparseStages<T>> {
    if !(gamma > T::zero()) {
        return Err(Error::domain(format!("gamma must be > 0, got {gamma}")));
    }
    if !(eps >= T::zero()) {
        return Err(Error::domain(format!("eps must be >= 0, got {eps}")));
    }
    c.require_unit_l1_ball()?;
    let s_bar = effective_sparsity(&c.weights);
    let budget = effective_sparse_budget(s_bar, gamma, eps, c.dim());
    let grid_pitch = gamma / (T::of(budget as f64) * (T::one() + eps));
    let truncated = truncate_top_s(&c.weights, budget)?;
    let rounded = truncated
        .iter()
        .map(|&v| round_to_grid(v, grid_pitch))
        .collect();
    Ok(EffectiveSparseStages {
        effective_sparsity: s_bar,
        budget,
        grid_pitch,
        truncated,
        rounded: Vector::from_vec_unchecked(rounded),
    })
}

/// Deterministic compression of an effectively sparse classifier: keep the
/// `s` largest entries and round them to multiples of `gamma / (s(1 + eps))`.
/// The adversarial margin moves by at most `gamma` on every input of the
/// unit l_inf ball.
pub fn compress_vector_effective_sparse<T: Scalar>(
    c: &LinearClassifier<T>,
    gamma: T,
    eps: T,
) -> Result<Vector<T>> {
    compress_vector_effective_sparse_stages(c, gamma, eps).map(|s| s.rounded)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Regime {
    Valid,
    Invalid(String),
}

impl Regime {
    pub fn is_valid(&self) -> bool {
        matches!(self, Regime::Valid)
    }
}

/// Term breakdown of a linear-classifier bound.
///
/// The bounded quantity is the adversarial risk of the *compressed*
/// classifier `f_w_hat`, not of `f_w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBoundReport {
    pub gamma: f64,
    pub eps: f64,
    pub m: usize,
    /// Failure probability of the randomized compressor, when one is used.
    pub delta: Option<f64>,
    /// Number of free entries of the compressed family.
    pub q: f64,
    /// Number of values each free entry can take.
    pub r: f64,
    /// `q ln r`.
    pub log_card: f64,
    pub capacity: f64,
    /// `1 - exp(-log_card)`.
    pub confidence: f64,
    pub regime: Regime,
    pub bounded_quantity: String,
}

fn check_bound_args(gamma: f64, eps: f64, m: usize) -> Result<()> {
    if !(gamma > 0.0) {
        return Err(Error::domain(format!("gamma must be > 0, got {gamma}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::domain(format!("eps must be >= 0, got {eps}")));
    }
    if m == 0 {
        return Err(Error::domain("sample count m must be >= 1"));
    }
    Ok(())
}

const COMPRESSED_RISK: &str = "adversarial risk of the compressed classifier";

/// Bound obtained through the randomized compressor, with
/// `delta = ((1 + eps)^2 / (gamma^2 m))^(1/3)`, `q = (1 + eps)^2 / (delta gamma^2)`,
/// `r = 4 n delta gamma / (1 + eps)` and capacity `sqrt(q ln r / m) + delta`.
pub fn bound_linear_stochastic(gamma: f64, eps: f64, m: usize, n: usize) -> Result<LinearBoundReport> {
    check_bound_args(gamma, eps, m)?;
    if n == 0 {
        return Err(Error::domain("dimension n must be >= 1"));
    }
    let one_eps = 1.0 + eps;
    let mf = m as f64;
    let delta = (one_eps * one_eps / (gamma * gamma * mf)).cbrt();
    let q = one_eps * one_eps / (delta * gamma * gamma);
    let r = 4.0 * n as f64 * delta * gamma / one_eps;
    let log_r = r.ln();
    let regime = if !(log_r > 0.0) {
        Regime::Invalid(format!("ln r = {log_r} <= 0: grid has at most one value per entry"))
    } else if delta > 1.0 {
        Regime::Invalid(format!("delta = {delta} > 1: sample too small for this margin"))
    } else {
        Regime::Valid
    };
    let log_card = q * log_r;
    let capacity = (q * log_r / mf).max(0.0).sqrt() + delta;
    Ok(LinearBoundReport {
        gamma,
        eps,
        m,
        delta: Some(delta),
        q,
        r,
        log_card,
        capacity,
        confidence: 1.0 - (-log_card).exp(),
        regime,
        bounded_quantity: COMPRESSED_RISK.to_string(),
    })
}

/// Bound for an effectively `s_bar`-sparse classifier:
/// `q = s_bar (1 + eps) / (2 gamma)`, `r = 4 s_bar (1 + eps)^2 / gamma^2`,
/// capacity `sqrt(q ln r / m)`.
pub fn bound_linear_sparse(s_bar: f64, gamma: f64, eps: f64, m: usize) -> Result<LinearBoundReport> {
    check_bound_args(gamma, eps, m)?;
    if !(s_bar >= 1.0) {
        return Err(Error::domain(format!("effective sparsity must be >= 1, got {s_bar}")));
    }
    let one_eps = 1.0 + eps;
    let q = s_bar * one_eps / (2.0 * gamma);
    let r = 4.0 * s_bar * one_eps * one_eps / (gamma * gamma);
    let log_r = r.ln();
    let regime = if log_r > 0.0 {
        Regime::Valid
    } else {
        Regime::Invalid(format!("ln r = {log_r} <= 0: grid has at most one value per entry"))
    };
    let log_card = q * log_r;
    Ok(LinearBoundReport {
        gamma,
        eps,
        m,
        delta: None,
        q,
        r,
        log_card,
        capacity: (log_card / m as f64).max(0.0).sqrt(),
        confidence: 1.0 - (-log_card).exp(),
        regime,
        bounded_quantity: COMPRESSED_RISK.to_string(),
    })
}
