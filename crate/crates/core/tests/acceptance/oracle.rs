//! Plain re-derivations used as oracles. Nothing here calls into the crate.

use std::f64::consts::E;

pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn half(v: &[f64]) -> f64 {
    let r: f64 = v.iter().map(|x| x.abs().sqrt()).sum();
    r * r
}

/// For every subset size `s`, the smallest l1 and l_inf errors of keeping
/// exactly that subset, by enumerating all `2^n` subsets.
pub fn subset_minima(v: &[f64]) -> Vec<(f64, f64)> {
    let n = v.len();
    assert!(n <= 22);
    let full = (1usize << n) - 1;
    // dropped-set sums and maxima, built from the set without its lowest element
    let mut sum = vec![0.0f64; 1 << n];
    let mut max = vec![0.0f64; 1 << n];
    let mut best = vec![(f64::INFINITY, f64::INFINITY); n + 1];
    for dropped in 0..=full {
        if dropped != 0 {
            let low = dropped.trailing_zeros() as usize;
            let rest = dropped & (dropped - 1);
            sum[dropped] = sum[rest] + v[low].abs();
            max[dropped] = max[rest].max(v[low].abs());
        }
        let s = n - dropped.count_ones() as usize;
        let b = &mut best[s];
        b.0 = b.0.min(sum[dropped]);
        b.1 = b.1.min(max[dropped]);
    }
    best
}

/// No exchange of one kept and one dropped coordinate lowers either error.
/// For objectives that are sums or maxima over the dropped set this is
/// equivalent to global optimality.
pub fn swap_optimal(v: &[f64], z: &[f64]) -> bool {
    let kept: Vec<usize> = (0..v.len()).filter(|&i| z[i] != 0.0).collect();
    let dropped: Vec<usize> = (0..v.len()).filter(|&i| z[i] == 0.0 && v[i] != 0.0).collect();
    kept.iter().all(|&k| dropped.iter().all(|&d| v[d].abs() <= v[k].abs()))
}

/// Column-major matrix with `rows` entries per column.
#[derive(Clone, Debug)]
pub struct Mat {
    pub rows: usize,
    pub cols: Vec<Vec<f64>>,
}

impl Mat {
    pub fn norm_1_inf(&self) -> f64 {
        self.cols.iter().map(|c| l1(c)).fold(0.0, f64::max)
    }

    pub fn norm_1_1(&self) -> f64 {
        self.cols.iter().map(|c| l1(c)).sum()
    }

    pub fn col_sparsity(&self) -> f64 {
        self.cols
            .iter()
            .map(|c| if l1(c) == 0.0 { 1.0 } else { half(c) / l1(c) })
            .fold(1.0, f64::max)
    }

    pub fn joint_sparsity(&self) -> f64 {
        let m = self.norm_1_inf();
        if m == 0.0 { 1.0 } else { self.norm_1_1() / m }
    }

    pub fn scaled(&self, c: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols.iter().map(|col| col.iter().map(|x| x * c).collect()).collect() }
    }
}

fn clamp_ceil(raw: f64, n: usize) -> usize {
    (raw.ceil().max(1.0) as usize).min(n)
}

/// Budgets `(s1, s2)` and grid pitch for compressing `w` to error `gamma`.
pub fn budgets(w: &Mat, gamma: f64) -> (usize, usize, f64) {
    let norm = w.norm_1_inf();
    let s1 = clamp_ceil(3.0 * norm * w.col_sparsity() / (4.0 * gamma), w.rows);
    let s2 = clamp_ceil(3.0 * norm * w.joint_sparsity() / gamma, w.cols.len());
    (s1, s2, 2.0 * gamma / (3.0 * s1 as f64))
}

pub fn log_card(s1: usize, s2: usize, n1: usize, n2: usize, gamma: f64) -> f64 {
    let (a, b) = (s1 as f64, s2 as f64);
    b * (E * n2 as f64 / b).ln() + a * b * (E * n1 as f64 / a).ln() + a * b * (1.0 + 6.0 / gamma).ln()
}

pub struct LinearTerms {
    pub q: f64,
    pub r: f64,
    pub capacity: f64,
    pub delta: Option<f64>,
}

pub fn linear_sparse(s_bar: f64, gamma: f64, eps: f64, m: usize) -> LinearTerms {
    let q = s_bar * (1.0 + eps) / (2.0 * gamma);
    let r = 4.0 * s_bar * (1.0 + eps).powi(2) / gamma.powi(2);
    LinearTerms { q, r, capacity: (q * r.ln() / m as f64).sqrt(), delta: None }
}

pub fn linear_stochastic(gamma: f64, eps: f64, m: usize, n: usize) -> LinearTerms {
    let delta = ((1.0 + eps).powi(2) / (gamma.powi(2) * m as f64)).powf(1.0 / 3.0);
    let q = (1.0 + eps).powi(2) / (delta * gamma.powi(2));
    let r = 4.0 * n as f64 * delta * gamma / (1.0 + eps);
    LinearTerms { q, r, capacity: (q * r.ln() / m as f64).sqrt() + delta, delta: Some(delta) }
}

pub struct NetworkTerms {
    pub scale: f64,
    pub budgets: Vec<f64>,
    pub log_card: f64,
    pub exact: f64,
    pub surrogate: f64,
}

/// Rebalances `layers`, splits the error along `sqrt(s1_bar s2_bar)` and sums
/// the per-layer counts.
pub fn network_bound(layers: &[Mat], gamma: f64, eps: f64, m: usize, loss: f64) -> NetworkTerms {
    let scale: f64 = layers.iter().map(Mat::norm_1_inf).product();
    let balanced: Vec<Mat> = layers.iter().map(|w| w.scaled(1.0 / w.norm_1_inf())).collect();
    let g = gamma / scale;
    let weights: Vec<f64> = balanced.iter().map(|w| (w.col_sparsity() * w.joint_sparsity()).sqrt()).collect();
    let total: f64 = weights.iter().sum();
    let d = layers.len();
    let mut level = 2.0 * eps;
    let mut budgets = Vec::new();
    for (i, wt) in weights.iter().enumerate() {
        let next = if i + 1 == d { g / 2.0 } else { level + wt / total * (g / 2.0 - 2.0 * eps) };
        budgets.push((next - level) / (1.0 + eps + level));
        level = next;
    }
    let log_card: f64 = balanced
        .iter()
        .zip(&budgets)
        .map(|(w, &gi)| {
            let (s1, s2, _) = self::budgets(w, gi);
            log_card(s1, s2, w.rows, w.cols.len(), gi)
        })
        .sum();
    let ratio = (1.0 + g / 2.0 - eps) / (g / 2.0 - 2.0 * eps);
    let surrogate = (d as f64 / m as f64 * ratio * ratio * total * total).sqrt();
    NetworkTerms { scale, budgets, log_card, exact: loss + (log_card / m as f64).sqrt(), surrogate }
}

/// Scores `x^d` with `x^i = phi(W_i^T x^(i-1))`, ReLU on hidden layers.
pub fn forward(layers: &[Mat], x: &[f64], relu_last: bool) -> Vec<f64> {
    let mut a = x.to_vec();
    for (i, w) in layers.iter().enumerate() {
        let last = i + 1 == layers.len();
        a = w
            .cols
            .iter()
            .map(|c| {
                let z: f64 = c.iter().zip(&a).map(|(p, q)| p * q).sum();
                if !last || relu_last { z.max(0.0) } else { z }
            })
            .collect();
    }
    a
}

pub fn margin(scores: &[f64], y: usize) -> f64 {
    let other = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .fold(f64::NEG_INFINITY, |a, (_, &s)| a.max(s));
    scores[y] - other
}

/// Mean softmax cross-entropy over a batch.
pub fn mean_cross_entropy(layers: &[Mat], batch: &[Vec<f64>], targets: &[usize], relu_last: bool) -> f64 {
    let total: f64 = batch
        .iter()
        .zip(targets)
        .map(|(x, &y)| {
            let s = forward(layers, x, relu_last);
            let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + s.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            lse - s[y]
        })
        .sum();
    total / batch.len() as f64
}
