//! l_inf attacks on the classification margin and adversarial risk estimates.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::network::{runner_up, LayeredNetwork};
use crate::rng;
use crate::scalar::Scalar;

/// Projected signed-gradient descent on the margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_init: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// Step `2.5 eps / steps`, uniform start in the ball.
    pub fn standard(eps: f64, steps: usize, seed: u64) -> Self {
        AttackConfig {
            eps,
            steps,
            step_size: 2.5 * eps / steps.max(1) as f64,
            random_init: true,
            seed,
        }
    }

    /// One full-size step from the clean input.
    pub fn fgsm(eps: f64) -> Self {
        AttackConfig {
            eps,
            steps: 1,
            step_size: eps,
            random_init: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::domain(format!("attack eps must be >= 0, got {}", self.eps)));
        }
        if self.steps == 0 {
            return Err(Error::domain("attack needs at least one step"));
        }
        if !(self.step_size > 0.0 || (self.eps == 0.0 && self.step_size == 0.0)) {
            return Err(Error::domain(format!(
                "attack step size must be > 0, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::standard(0.2, 10, 0)
    }
}

/// Perturbations and the margins they reach, one row per sample.
#[derive(Clone, Debug)]
pub struct AttackOutcome<T> {
    pub perturbations: Array2<T>,
    pub margins: Vec<T>,
}

fn row_margins<T: Scalar>(scores: &Array2<T>, labels: &[usize]) -> Vec<T> {
    scores
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| {
            let s = row.as_slice().expect("standard layout");
            s[y] - s[runner_up(s, y)]
        })
        .collect()
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::domain("margins need at least two output classes"));
    }
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(Error::domain(format!("label {y} out of range for {classes} classes"))),
        None => Ok(()),
    }
}

/// Runs PGD from the configured start and hands every iterate
/// `eta_0, ..., eta_steps` with its margins to `visit`.
fn run_pgd<T: Scalar>(
    net: &LayeredNetwork<T>,
    inputs: ArrayView2<'_, T>,
    labels: &[usize],
    ids: &[u64],
    cfg: &AttackConfig,
    mut visit: impl FnMut(&Array2<T>, &[T]),
) -> Result<()> {
    cfg.validate()?;
    Error::check_dim("attack labels", inputs.nrows(), labels.len())?;
    Error::check_dim("attack stream ids", inputs.nrows(), ids.len())?;
    Error::check_dim("attack input", net.input_dim(), inputs.ncols())?;
    check_labels(labels, net.output_dim())?;
    let eps = T::of(cfg.eps);
    let step = T::of(cfg.step_size);
    let mut eta = Array2::<T>::zeros(inputs.raw_dim());
    if cfg.random_init && cfg.eps > 0.0 {
        for (mut row, &id) in eta.axis_iter_mut(Axis(0)).zip(ids) {
            let mut r = rng::stream(cfg.seed, id);
            row.iter_mut()
                .for_each(|v| *v = T::of(r.random_range(-cfg.eps..=cfg.eps)).max(-eps).min(eps));
        }
    }
    for k in 0..=cfg.steps {
        let cache = net.forward_batch_cached((&inputs + &eta).view())?;
        visit(&eta, &row_margins(&cache.scores, labels));
        if k == cfg.steps || cfg.eps == 0.0 {
            break;
        }
        let mut score_grad = Array2::<T>::zeros(cache.scores.raw_dim());
        for (i, row) in cache.scores.axis_iter(Axis(0)).enumerate() {
            let s = row.as_slice().expect("standard layout");
            score_grad[[i, labels[i]]] = T::one();
            score_grad[[i, runner_up(s, labels[i])]] = -T::one();
        }
        let (_, grad) = net.backward(&cache, score_grad, false);
        eta.zip_mut_with(&grad, |e, &g| {
            let dir = if g > T::zero() {
                T::one()
            } else if g < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            *e = (*e - step * dir).max(-eps).min(eps);
        });
    }
    Ok(())
}

/// Attacks every row of `inputs`. Row `i` draws its random start from the
/// stream `(cfg.seed, ids[i])`. Each sample keeps the lowest-margin iterate
/// seen, counting the clean input, so the reported margin never exceeds the
/// clean one.
pub fn pgd_batch<T: Scalar>(
    net: &LayeredNetwork<T>,
    inputs: ArrayView2<'_, T>,
    labels: &[usize],
    ids: &[u64],
    cfg: &AttackConfig,
) -> Result<AttackOutcome<T>> {
    Error::check_dim("attack labels", inputs.nrows(), labels.len())?;
    Error::check_dim("attack input", net.input_dim(), inputs.ncols())?;
    check_labels(labels, net.output_dim())?;
    let mut best_eta = Array2::<T>::zeros(inputs.raw_dim());
    let mut best = row_margins(&net.forward_batch(inputs)?, labels);
    run_pgd(net, inputs, labels, ids, cfg, |eta, margins| {
        for (i, &m) in margins.iter().enumerate() {
            if m < best[i] {
                best[i] = m;
                best_eta.row_mut(i).assign(&eta.row(i));
            }
        }
    })?;
    Ok(AttackOutcome {
        perturbations: best_eta,
        margins: best,
    })
}

/// Perturbation `eta` with `||eta||_inf <= eps` found by PGD for one sample.
pub fn pgd_attack<T: Scalar>(net: &LayeredNetwork<T>, x: &[T], y: usize, cfg: &AttackConfig) -> Result<Vector<T>> {
    let input = single_row(net, x)?;
    let out = pgd_batch(net, input.view(), &[y], &[0], cfg)?;
    Ok(Vector::from_vec_unchecked(out.perturbations.row(0).to_vec()))
}

pub fn fgsm_attack<T: Scalar>(net: &LayeredNetwork<T>, x: &[T], y: usize, eps: f64) -> Result<Vector<T>> {
    pgd_attack(net, x, y, &AttackConfig::fgsm(eps))
}

fn single_row<T: Scalar>(net: &LayeredNetwork<T>, x: &[T]) -> Result<Array2<T>> {
    Error::check_dim("attack input", net.input_dim(), x.len())?;
    Ok(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape matches"))
}

/// Margins of the raw iterates `eta_0, ..., eta_steps`, without keeping the best.
pub fn pgd_trajectory<T: Scalar>(net: &LayeredNetwork<T>, x: &[T], y: usize, cfg: &AttackConfig) -> Result<Vec<T>> {
    let input = single_row(net, x)?;
    let mut margins = Vec::with_capacity(cfg.steps + 1);
    run_pgd(net, input.view(), &[y], &[0], cfg, |_, m| margins.push(m[0]))?;
    Ok(margins)
}

/// `margin(x + eta_PGD, y)`: an upper estimate of the adversarial margin.
pub fn adversarial_margin_estimate<T: Scalar>(
    net: &LayeredNetwork<T>,
    x: &[T],
    y: usize,
    cfg: &AttackConfig,
) -> Result<T> {
    let input = single_row(net, x)?;
    Ok(pgd_batch(net, input.view(), &[y], &[0], cfg)?.margins[0])
}

const CHUNK: usize = 256;

/// Estimated adversarial margin of every sample. Sample `i` uses the random
/// stream `(cfg.seed, i)`, so the result does not depend on thread count.
pub fn adversarial_margins<T: Scalar>(
    net: &LayeredNetwork<T>,
    data: &Dataset<T>,
    cfg: &AttackConfig,
) -> Result<Vec<T>> {
    Error::check_dim("attack input", net.input_dim(), data.input_dim())?;
    let inputs = data.inputs();
    let starts: Vec<usize> = (0..data.len()).step_by(CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(data.len());
            let ids: Vec<u64> = (start as u64..end as u64).collect();
            pgd_batch(
                net,
                inputs.slice(s![start..end, ..]),
                &data.labels()[start..end],
                &ids,
                cfg,
            )
            .map(|o| o.margins)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.concat())
}

/// Fraction of samples with margin at most `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub gamma: f64,
    pub eps: f64,
    pub m: usize,
    pub count: usize,
}

pub fn margin_risk<T: Scalar>(margins: &[T], gamma: f64, eps: f64) -> Result<RiskEstimate> {
    if margins.is_empty() {
        return Err(Error::domain("risk of an empty sample is undefined"));
    }
    let count = margins.iter().filter(|m| m.as_f64() <= gamma).count();
    Ok(RiskEstimate {
        value: count as f64 / margins.len() as f64,
        gamma,
        eps,
        m: margins.len(),
        count,
    })
}

/// Empirical adversarial margin loss with PGD margins. PGD only finds upper
/// estimates of each margin, so this is a lower estimate of the true loss.
pub fn adversarial_risk<T: Scalar>(
    net: &LayeredNetwork<T>,
    data: &Dataset<T>,
    gamma: f64,
    cfg: &AttackConfig,
) -> Result<RiskEstimate> {
    if data.is_empty() {
        return Err(Error::domain("risk of an empty dataset is undefined"));
    }
    margin_risk(&adversarial_margins(net, data, cfg)?, gamma, cfg.eps)
}

/// Attack size for adversarial epoch `k` of `total`: linear from `lo` at the
/// first adversarial epoch to `hi` at the last (just `hi` for one epoch).
pub fn eps_ramp(lo: f64, hi: f64, k: usize, total: usize) -> f64 {
    if total <= 1 {
        return hi;
    }
    let t = k.min(total - 1) as f64 / (total - 1) as f64;
    lo + (hi - lo) * t
}
