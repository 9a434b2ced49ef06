//! Robust generalization bound for ReLU networks, in exact covering-count
//! form and in its asymptotic closed form.

use serde::{Deserialize, Serialize};

use crate::adversarial::{adversarial_margins, margin_risk, AttackConfig};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::matrix_compress::{plan_capacity, plan_compression, CapacityCount};
use crate::network::{check_margin_attack, error_schedule, LayeredNetwork};
use crate::scalar::Scalar;

/// Name of the risk a network bound controls.
pub const NETWORK_BOUNDED_QUANTITY: &str =
    "adversarial risk of the compressed network (ReLU on every layer)";

pub const SURROGATE_LABEL: &str = "asymptotic form, constants dropped";

/// Per-layer terms of a network bound, in rebalanced units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBound {
    pub rows: usize,
    pub cols: usize,
    pub norm_1_inf: f64,
    pub column_sparsity: f64,
    pub joint_sparsity: f64,
    pub gamma_i: f64,
    pub s1: usize,
    pub s2: usize,
    pub quant_step: f64,
    pub capacity: CapacityCount,
    /// `||W||^2 s1_bar s2_bar / gamma_i^2`, the log-free order of `log_card`.
    pub soft_order: f64,
}

/// Every term of a network bound evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Margin threshold in the network's own units.
    pub gamma: f64,
    pub eps: f64,
    pub m: usize,
    /// Product of layer `(1, inf)` norms removed by rebalancing.
    pub scale: f64,
    /// `gamma / scale`, the threshold the analysis runs at.
    pub gamma_rebalanced: f64,
    pub empirical_loss: f64,
    pub levels: Vec<f64>,
    pub layers: Vec<LayerBound>,
    /// `sum_i log_card_i`.
    pub log_card: f64,
    /// `sqrt(log_card / m)`.
    pub capacity_term: f64,
    pub bound_exact: f64,
    /// `1 - exp(-log_card)`.
    pub confidence: f64,
    pub surrogate_term: f64,
    pub bound_surrogate: f64,
    pub surrogate_label: String,
    pub bounded_quantity: String,
}

/// `sqrt(d/m ((1 + gamma/2 - eps) / (gamma/2 - 2 eps))^2 (sum_j sqrt(s1_bar^j s2_bar^j))^2)`
/// with `gamma` in rebalanced units.
pub fn network_surrogate(depth: usize, total_weight: f64, gamma: f64, eps: f64, m: usize) -> Result<f64> {
    check_margin_attack(gamma, eps)?;
    if m == 0 {
        return Err(Error::domain("sample count m must be >= 1"));
    }
    let ratio = (1.0 + gamma / 2.0 - eps) / (gamma / 2.0 - 2.0 * eps);
    Ok((depth as f64 / m as f64 * ratio * ratio * total_weight * total_weight).sqrt())
}

/// Evaluates the bound for `net` at margin `gamma` (network units) and
/// attack size `eps`. The network is analysed with ReLU on its final layer
/// and rebalanced first, so the analysis runs at `gamma / scale`, which must
/// exceed `4 eps`.
pub fn bound_network<T: Scalar>(
    net: &LayeredNetwork<T>,
    gamma: f64,
    eps: f64,
    m: usize,
    empirical_loss: f64,
) -> Result<BoundReport> {
    if m == 0 {
        return Err(Error::domain("sample count m must be >= 1"));
    }
    if !(0.0..=1.0).contains(&empirical_loss) {
        return Err(Error::domain(format!(
            "empirical loss must lie in [0, 1], got {empirical_loss}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!("gamma must be positive and finite, got {gamma}")));
    }
    let (balanced, scale) = net.cast::<f64>().analysed_form().rebalance()?;
    let gamma_rebalanced = gamma / scale;
    check_margin_attack(gamma_rebalanced, eps).map_err(|e| match e {
        Error::Precondition(msg) => Error::Precondition(format!(
            "{msg}; gamma is given in network units, rebalancing scale is {scale}"
        )),
        other => other,
    })?;
    let profile = balanced.sparsity_profile();
    let schedule = error_schedule(&profile, gamma_rebalanced, eps)?;
    let layers = balanced
        .layers()
        .iter()
        .zip(&schedule.budgets)
        .map(|(w, &g)| {
            let plan = plan_compression(w, g)?;
            Ok(LayerBound {
                rows: w.rows(),
                cols: w.cols(),
                norm_1_inf: plan.norm_1_inf,
                column_sparsity: plan.column_sparsity,
                joint_sparsity: plan.joint_sparsity,
                gamma_i: g,
                s1: plan.s1,
                s2: plan.s2,
                quant_step: plan.quant_step,
                capacity: plan_capacity(&plan, w.rows(), w.cols())?,
                soft_order: plan.soft_order_scaling(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let log_card: f64 = layers.iter().map(|l| l.capacity.log_card).sum();
    let capacity_term = (log_card / m as f64).sqrt();
    let surrogate_term =
        network_surrogate(profile.depth(), profile.total_weight(), gamma_rebalanced, eps, m)?;
    Ok(BoundReport {
        gamma,
        eps,
        m,
        scale,
        gamma_rebalanced,
        empirical_loss,
        levels: schedule.levels,
        layers,
        log_card,
        capacity_term,
        bound_exact: empirical_loss + capacity_term,
        confidence: -(-log_card).exp_m1(),
        surrogate_term,
        bound_surrogate: empirical_loss + surrogate_term,
        surrogate_label: SURROGATE_LABEL.to_string(),
        bounded_quantity: NETWORK_BOUNDED_QUANTITY.to_string(),
    })
}

/// Empirical adversarial margin loss at `gamma` (network units) of the
/// network with ReLU on its final layer, with margins from PGD at `attack`.
/// Every margin of that form is at most `scale * ||x||_inf`, so once `gamma`
/// reaches this every sample counts and the loss is exactly 1.
pub fn empirical_bound_loss<T: Scalar>(
    net: &LayeredNetwork<T>,
    data: &Dataset<T>,
    gamma: f64,
    attack: &AttackConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("loss of an empty dataset is undefined"));
    }
    let analysed = net.analysed_form();
    let scale: f64 = analysed.layer_norms().iter().map(|n| n.as_f64()).product();
    let radius = data.inputs().iter().fold(0.0f64, |a, v| a.max(v.abs().as_f64()));
    if gamma >= scale * radius {
        return Ok(1.0);
    }
    let margins = adversarial_margins(&analysed, data, attack)?;
    Ok(margin_risk(&margins, gamma, attack.eps)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::network::Activation;

    fn diag_net() -> LayeredNetwork<f64> {
        // every layer a scaled identity: s1_bar = 1, s2_bar = n
        let layers = vec![DenseMatrix::identity(4).scale(2.0), DenseMatrix::identity(4).scale(0.5)];
        LayeredNetwork::new(layers, Activation::Identity).unwrap()
    }

    #[test]
    fn surrogate_example() {
        let v = network_surrogate(3, 12.0, 1.0, 0.2, 10_000).unwrap();
        let expected = (3.0f64 / 1e4 * (1.3f64 / 0.1).powi(2) * 144.0).sqrt();
        assert!((v - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn surrogate_pole_at_quarter_gamma() {
        let near = network_surrogate(2, 4.0, 1.0, 0.2499999, 100).unwrap();
        let far = network_surrogate(2, 4.0, 1.0, 0.1, 100).unwrap();
        assert!(near > 1e5 * far);
        assert!(matches!(network_surrogate(2, 4.0, 1.0, 0.25, 100), Err(Error::Precondition(_))));
    }

    #[test]
    fn report_terms_are_consistent() {
        let r = bound_network(&diag_net(), 1.0, 0.05, 1000, 0.3).unwrap();
        assert_eq!(r.scale, 1.0);
        assert_eq!(r.layers.len(), 2);
        let sum: f64 = r.layers.iter().map(|l| l.capacity.log_card).sum();
        assert_eq!(r.log_card, sum);
        assert_eq!(r.bound_exact, 0.3 + (sum / 1000.0).sqrt());
        assert!(r.capacity_term >= 0.0);
        assert!(r.confidence > 0.0 && r.confidence <= 1.0);
        assert_eq!(*r.levels.last().unwrap(), 0.5);
        for l in &r.layers {
            assert_eq!(l.column_sparsity, 1.0);
            assert!((l.joint_sparsity - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_vanishes_with_samples() {
        let a = bound_network(&diag_net(), 1.0, 0.0, 100, 0.0).unwrap();
        let b = bound_network(&diag_net(), 1.0, 0.0, 1_000_000, 0.0).unwrap();
        assert!(b.capacity_term < a.capacity_term / 99.0);
    }

    #[test]
    fn gamma_is_in_network_units() {
        let big = LayeredNetwork::new(
            diag_net().layers().iter().map(|w| w.scale(10.0)).collect(),
            Activation::Relu,
        )
        .unwrap();
        let r = bound_network(&big, 100.0, 0.05, 1000, 0.0).unwrap();
        assert!((r.scale - 100.0).abs() < 1e-12);
        assert!((r.gamma_rebalanced - 1.0).abs() < 1e-12);
        let err = bound_network(&big, 1.0, 0.05, 1000, 0.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(ref m) if m.contains("scale")));
    }

    #[test]
    fn larger_gamma_lowers_capacity_when_unclamped() {
        let w = DenseMatrix::from_row_major(
            32,
            32,
            (0..1024).map(|i| if i % 37 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let net = LayeredNetwork::new(vec![w], Activation::Relu).unwrap();
        let a = bound_network(&net, 2.0, 0.0, 1000, 0.0).unwrap();
        let b = bound_network(&net, 4.0, 0.0, 1000, 0.0).unwrap();
        assert!(b.capacity_term < a.capacity_term);
    }

    #[test]
    fn report_json_round_trip() {
        let r = bound_network(&diag_net(), 1.0, 0.05, 1000, 0.3).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: BoundReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["gamma", "eps", "m", "scale", "layers", "log_card", "bound_exact", "bounded_quantity"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
