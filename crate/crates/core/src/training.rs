//! Mini-batch training with softmax cross-entropy, followed by PGD
//! adversarial training with a growing attack size.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{adversarial_margins, eps_ramp, margin_risk, pgd_batch, AttackConfig};
use crate::bound::{bound_network, empirical_bound_loss};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::{Activation, LayeredNetwork};
use crate::rng;
use crate::scalar::Scalar;
use crate::sparsity::LayerSparsity;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Momentum,
}

/// What is measured after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Samples (from the front of the training set) used for the attack-based
    /// metrics; `None` uses all of them.
    pub eval_samples: Option<usize>,
    /// Attack size for `adv_risk` and for the bound.
    pub eps: f64,
    pub attack_steps: usize,
    /// Bound margin in rebalanced units: the bound runs at
    /// `gamma = bound_margin * scale` for the current network.
    pub bound_margin: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            eval_samples: Some(1000),
            eps: 0.2,
            attack_steps: 10,
            bound_margin: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Fraction of epochs trained on clean inputs before attacks start.
    pub adversarial_phase_start: f64,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub attack_steps: usize,
    pub attack_random_init: bool,
    pub seed: u64,
    pub metrics: MetricsConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Momentum,
            momentum: 0.9,
            adversarial_phase_start: 0.5,
            eps_lo: 0.05,
            eps_hi: 0.2,
            attack_steps: 10,
            attack_random_init: true,
            seed: 0,
            metrics: MetricsConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::domain(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.adversarial_phase_start) {
            return bad(format!(
                "adversarial_phase_start must lie in [0, 1], got {}",
                self.adversarial_phase_start
            ));
        }
        if !(0.0 <= self.eps_lo && self.eps_lo <= self.eps_hi && self.eps_hi.is_finite()) {
            return bad(format!(
                "need 0 <= eps_lo <= eps_hi, got {} and {}",
                self.eps_lo, self.eps_hi
            ));
        }
        if self.attack_steps == 0 || self.metrics.attack_steps == 0 {
            return bad("attack steps must be >= 1".into());
        }
        if !(self.metrics.eps >= 0.0) || !(self.metrics.bound_margin > 0.0) {
            return bad("metrics eps must be >= 0 and bound_margin > 0".into());
        }
        if self.metrics.eval_samples == Some(0) {
            return bad("eval_samples must be >= 1".into());
        }
        Ok(())
    }

    /// Epochs trained on clean inputs.
    pub fn standard_epochs(&self) -> usize {
        (self.adversarial_phase_start * self.epochs as f64).floor() as usize
    }

    pub fn phase(&self, epoch: usize) -> Phase {
        if epoch <= self.standard_epochs() {
            Phase::Standard
        } else {
            Phase::Adversarial
        }
    }

    /// Training attack size for 1-based `epoch`; 0 before the adversarial phase.
    pub fn eps_attack(&self, epoch: usize) -> f64 {
        let start = self.standard_epochs();
        if epoch <= start {
            0.0
        } else {
            eps_ramp(self.eps_lo, self.eps_hi, epoch - start - 1, self.epochs - start)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Standard,
    Adversarial,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Standard => "standard",
            Phase::Adversarial => "adversarial",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub eps_attack: f64,
    /// Mean cross-entropy over the inputs trained on this epoch.
    pub train_loss: f64,
    /// 0-1 error on the whole training set.
    pub clean_risk: f64,
    /// PGD estimate of the adversarial risk at `metrics.eps`.
    pub adv_risk: f64,
    pub bound_exact: f64,
    pub bound_surrogate: f64,
    pub sparsity: Vec<LayerSparsity>,
}

/// Uniform `+-1/sqrt(n_in)` weights, no biases, identity on the last layer.
pub fn init_network<T: Scalar>(widths: &[usize], seed: u64) -> Result<LayeredNetwork<T>> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::domain(format!("invalid layer widths {widths:?}")));
    }
    let mut r = rng::seeded(seed);
    let layers = widths
        .windows(2)
        .map(|p| {
            let a = 1.0 / (p[0] as f64).sqrt();
            let e = (0..p[0] * p[1]).map(|_| T::of(r.random_range(-a..a))).collect();
            DenseMatrix::from_row_major(p[0], p[1], e)
        })
        .collect::<Result<Vec<_>>>()?;
    LayeredNetwork::new(layers, Activation::Identity)
}

/// Mean softmax cross-entropy of `scores` and its gradient with respect to them.
pub fn cross_entropy<T: Scalar>(scores: &Array2<T>, targets: &[usize]) -> (T, Array2<T>) {
    let b = T::of(scores.nrows() as f64);
    let mut grad = scores.clone();
    let mut loss = T::zero();
    for ((mut row, &y), raw) in grad.axis_iter_mut(Axis(0)).zip(targets).zip(scores.axis_iter(Axis(0))) {
        let max = raw.fold(T::neg_infinity(), |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z: T = row.sum();
        loss += z.ln() - (raw[y] - max);
        row.mapv_inplace(|v| v / z);
        row[y] -= T::one();
        row.mapv_inplace(|v| v / b);
    }
    (loss / b, grad)
}

/// Per-layer gradients of the mean cross-entropy over `batch` (one sample
/// per row), and the loss itself.
pub fn backprop_gradients<T: Scalar>(
    net: &LayeredNetwork<T>,
    batch: ArrayView2<'_, T>,
    targets: &[usize],
) -> Result<(T, Vec<Array2<T>>)> {
    Error::check_dim("batch targets", batch.nrows(), targets.len())?;
    if batch.nrows() == 0 {
        return Err(Error::domain("empty batch"));
    }
    if let Some(y) = targets.iter().find(|&&y| y >= net.output_dim()) {
        return Err(Error::domain(format!("target {y} out of range")));
    }
    let cache = net.forward_batch_cached(batch)?;
    let (loss, score_grad) = cross_entropy(&cache.scores, targets);
    let (grads, _) = net.backward(&cache, score_grad, true);
    Ok((loss, grads))
}

/// SGD, optionally with heavy-ball momentum `v <- mu v + g`, `W <- W - lr v`.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Array2<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(net: &LayeredNetwork<T>, kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Self {
        Optimizer {
            kind,
            learning_rate: T::of(learning_rate),
            momentum: T::of(momentum),
            velocity: net
                .layers()
                .iter()
                .map(|w| Array2::zeros((w.rows(), w.cols())))
                .collect(),
        }
    }

    pub fn step(&mut self, net: &mut LayeredNetwork<T>, grads: &[Array2<T>]) {
        let lr = self.learning_rate;
        for ((w, v), g) in net.layers_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            match self.kind {
                OptimizerKind::Sgd => w.array_mut().scaled_add(-lr, g),
                OptimizerKind::Momentum => {
                    let mu = self.momentum;
                    v.zip_mut_with(g, |vi, &gi| *vi = mu * *vi + gi);
                    w.array_mut().scaled_add(-lr, v);
                }
            }
        }
    }
}

/// One update on PGD examples at `attack.eps`. Returns the batch loss.
pub fn adversarial_training_step<T: Scalar>(
    net: &mut LayeredNetwork<T>,
    batch: ArrayView2<'_, T>,
    targets: &[usize],
    ids: &[u64],
    attack: &AttackConfig,
    optimizer: &mut Optimizer<T>,
) -> Result<T> {
    let adv = pgd_batch(net, batch, targets, ids, attack)?;
    let perturbed = &batch + &adv.perturbations;
    let (loss, grads) = backprop_gradients(net, perturbed.view(), targets)?;
    optimizer.step(net, &grads);
    Ok(loss)
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome<T> {
    pub network: LayeredNetwork<T>,
    pub history: Vec<EpochMetrics>,
}

fn clean_error<T: Scalar>(net: &LayeredNetwork<T>, data: &Dataset<T>) -> Result<f64> {
    let mut wrong = 0usize;
    let inputs = data.inputs();
    for start in (0..data.len()).step_by(1024) {
        let end = (start + 1024).min(data.len());
        let scores = net.forward_batch(inputs.slice(s![start..end, ..]))?;
        for (row, &y) in scores.axis_iter(Axis(0)).zip(&data.labels()[start..end]) {
            let best = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .fold(T::neg_infinity(), |a, (_, &v)| a.max(v));
            if row[y] <= best {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}

/// Measures a network the way the training loop does after each epoch.
pub fn evaluate<T: Scalar>(
    net: &LayeredNetwork<T>,
    data: &Dataset<T>,
    cfg: &TrainingConfig,
) -> Result<(f64, f64, f64, f64)> {
    let clean_risk = clean_error(net, data)?;
    let eval = match cfg.metrics.eval_samples {
        Some(n) => data.head(n),
        None => data.clone(),
    };
    let attack = AttackConfig {
        random_init: cfg.attack_random_init,
        ..AttackConfig::standard(cfg.metrics.eps, cfg.metrics.attack_steps, cfg.seed ^ 0xa77a_c4ed)
    };
    let adv_risk = margin_risk(&adversarial_margins(net, &eval, &attack)?, 0.0, attack.eps)?.value;
    let analysed = net.analysed_form();
    let (_, scale) = analysed.cast::<f64>().rebalance()?;
    let gamma = cfg.metrics.bound_margin * scale;
    let loss = empirical_bound_loss(&analysed, &eval, gamma, &attack)?;
    let report = bound_network(&analysed, gamma, cfg.metrics.eps, data.len(), loss)?;
    Ok((clean_risk, adv_risk, report.bound_exact, report.bound_surrogate))
}

/// Trains `net` in place on `data`, clean first and then on PGD examples,
/// calling `on_epoch` after every epoch. Deterministic given `cfg.seed`.
pub fn train<T: Scalar>(
    net: LayeredNetwork<T>,
    data: &Dataset<T>,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &LayeredNetwork<T>),
) -> Result<TrainingOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    Error::check_dim("training input", net.input_dim(), data.input_dim())?;
    if data.class_count() > net.output_dim() {
        return Err(Error::Dimension {
            context: "network outputs vs classes",
            expected: data.class_count(),
            found: net.output_dim(),
        });
    }
    let mut net = net;
    let mut optimizer = Optimizer::new(&net, cfg.optimizer, cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let m = data.len() as u64;
    for epoch in 1..=cfg.epochs {
        let phase = cfg.phase(epoch);
        let eps_attack = cfg.eps_attack(epoch);
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64));
        let attack = AttackConfig {
            random_init: cfg.attack_random_init,
            ..AttackConfig::standard(eps_attack, cfg.attack_steps, cfg.seed)
        };
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.select(idx);
            let loss = match phase {
                Phase::Standard => {
                    let (loss, grads) = backprop_gradients(&net, batch.inputs(), batch.labels())?;
                    optimizer.step(&mut net, &grads);
                    loss
                }
                Phase::Adversarial => {
                    let ids: Vec<u64> = idx.iter().map(|&i| epoch as u64 * m + i as u64).collect();
                    adversarial_training_step(
                        &mut net,
                        batch.inputs(),
                        batch.labels(),
                        &ids,
                        &attack,
                        &mut optimizer,
                    )?
                }
            };
            if !loss.is_finite() {
                return Err(Error::precondition(format!(
                    "training diverged at epoch {epoch}; lower the learning rate"
                )));
            }
            loss_sum += loss.as_f64() * idx.len() as f64;
        }
        let (clean_risk, adv_risk, bound_exact, bound_surrogate) = evaluate(&net, data, cfg)?;
        let metrics = EpochMetrics {
            epoch,
            phase,
            eps_attack,
            train_loss: loss_sum / data.len() as f64,
            clean_risk,
            adv_risk,
            bound_exact,
            bound_surrogate,
            sparsity: net.sparsity_profile().layers,
        };
        on_epoch(&metrics, &net);
        history.push(metrics);
    }
    Ok(TrainingOutcome {
        network: net,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{synthetic_dataset, SyntheticKind};

    fn random_batch(n: usize, b: usize, classes: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let x = Array2::from_shape_fn((b, n), |_| r.random_range(-1.0..1.0));
        let y = (0..b).map(|_| r.random_range(0..classes)).collect();
        (x, y)
    }

    fn loss_of(net: &LayeredNetwork<f64>, x: &Array2<f64>, y: &[usize]) -> f64 {
        cross_entropy(&net.forward_batch(x.view()).unwrap(), y).0
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::seeded(99);
        for seed in 0..20 {
            let widths: Vec<usize> = (0..3).map(|_| r.random_range(2..=8)).collect();
            let net = init_network::<f64>(&widths, seed).unwrap();
            let (x, y) = random_batch(widths[0], 5, widths[2], seed);
            let (_, grads) = backprop_gradients(&net, x.view(), &y).unwrap();
            let h = 1e-6;
            for (l, g) in grads.iter().enumerate() {
                let mut num = Array2::zeros(g.raw_dim());
                for ((i, j), v) in num.indexed_iter_mut() {
                    let mut plus = net.clone();
                    plus.layers_mut()[l].array_mut()[[i, j]] += h;
                    let mut minus = net.clone();
                    minus.layers_mut()[l].array_mut()[[i, j]] -= h;
                    *v = (loss_of(&plus, &x, &y) - loss_of(&minus, &x, &y)) / (2.0 * h);
                }
                let diff = (g - &num).mapv(f64::abs).sum();
                let scale = g.mapv(f64::abs).sum().max(num.mapv(f64::abs).sum());
                assert!(diff <= 1e-4 * scale + 1e-12, "layer {l}: {diff} vs {scale}");
            }
        }
    }

    #[test]
    fn zero_network_gradient_is_closed_form() {
        let net = LayeredNetwork::new(vec![DenseMatrix::<f64>::zeros(3, 2)], Activation::Identity).unwrap();
        let x = Array2::from_shape_vec((2, 3), vec![1.0, 0.5, -1.0, 0.2, 0.0, 0.4]).unwrap();
        let y = [0, 1];
        let (loss, g) = backprop_gradients(&net, x.view(), &y).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        // d/dW = X^T (softmax - onehot) / B with a uniform softmax
        let p = Array2::from_shape_vec((2, 2), vec![-0.5, 0.5, 0.5, -0.5]).unwrap();
        let expected = x.t().dot(&p) / 2.0;
        assert!((&g[0] - &expected).mapv(f64::abs).sum() < 1e-15);
    }

    #[test]
    fn duplicating_the_batch_keeps_the_gradient() {
        let net = init_network::<f64>(&[4, 6, 3], 1).unwrap();
        let (x, y) = random_batch(4, 7, 3, 2);
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        let (_, a) = backprop_gradients(&net, x.view(), &y).unwrap();
        let (_, b) = backprop_gradients(&net, x2.view(), &y2).unwrap();
        for (ga, gb) in a.iter().zip(&b) {
            assert!((ga - gb).mapv(f64::abs).sum() < 1e-12);
        }
    }

    #[test]
    fn schedule_of_phases() {
        let cfg = TrainingConfig { epochs: 20, ..TrainingConfig::default() };
        assert_eq!(cfg.standard_epochs(), 10);
        assert_eq!(cfg.phase(10), Phase::Standard);
        assert_eq!(cfg.phase(11), Phase::Adversarial);
        assert_eq!(cfg.eps_attack(10), 0.0);
        assert_eq!(cfg.eps_attack(11), 0.05);
        assert_eq!(cfg.eps_attack(20), 0.2);
        let pure = TrainingConfig { adversarial_phase_start: 1.0, ..cfg.clone() };
        assert!((1..=20).all(|e| pure.phase(e) == Phase::Standard));
        let fixed = TrainingConfig { adversarial_phase_start: 0.0, eps_lo: 0.1, eps_hi: 0.1, ..cfg };
        assert!((1..=20).all(|e| fixed.phase(e) == Phase::Adversarial && fixed.eps_attack(e) == 0.1));
    }

    #[test]
    fn config_validation() {
        let ok = TrainingConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainingConfig { epochs: 0, ..ok.clone() },
            TrainingConfig { adversarial_phase_start: 1.5, ..ok.clone() },
            TrainingConfig { eps_lo: 0.3, ..ok.clone() },
            TrainingConfig { learning_rate: 0.0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Domain(_))));
        }
    }

    fn small_cfg(epochs: usize, start: f64) -> TrainingConfig {
        TrainingConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.1,
            adversarial_phase_start: start,
            eps_lo: 0.01,
            eps_hi: 0.02,
            seed: 4,
            metrics: MetricsConfig { eval_samples: Some(50), eps: 0.02, attack_steps: 3, bound_margin: 1.0 },
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let kind = SyntheticKind::PlantedLinear { margin: 0.1, support: 3 };
        let data = synthetic_dataset(kind, 10, 200, 3).unwrap().dataset;
        let net = init_network::<f64>(&[10, 16, 2], 7).unwrap();
        let out = train(net, &data, &small_cfg(50, 1.0), |_, _| {}).unwrap();
        assert_eq!(out.history.last().unwrap().clean_risk, 0.0);
        let first = &out.history[0];
        assert!(out.history.last().unwrap().train_loss < first.train_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let kind = SyntheticKind::GaussianClusters { classes: 3, spread: 0.3 };
        let data = synthetic_dataset(kind, 8, 120, 1).unwrap().dataset.cast::<f32>();
        let run = || {
            let net = init_network::<f32>(&[8, 12, 3], 5).unwrap();
            train(net, &data, &small_cfg(4, 0.5), |_, _| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.network, b.network);
        assert_eq!(a.history[1].phase, Phase::Standard);
        assert_eq!(a.history[2].phase, Phase::Adversarial);
    }

    #[test]
    fn callback_sees_every_epoch() {
        let kind = SyntheticKind::GaussianClusters { classes: 2, spread: 0.2 };
        let data = synthetic_dataset(kind, 5, 40, 2).unwrap().dataset;
        let mut seen = Vec::new();
        let net = init_network::<f64>(&[5, 4, 2], 1).unwrap();
        train(net, &data, &small_cfg(3, 0.0), |m, n| {
            assert_eq!(m.sparsity.len(), n.depth());
            seen.push(m.epoch)
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }
}
