use ndarray::Array2;
use proptest::prelude::*;
use sparse_cert::adversarial::{adversarial_risk, pgd_batch, AttackConfig};
use sparse_cert::data_io::{prepare_idx, read_idx, write_idx, Dataset, IdxImages};
use sparse_cert::linalg::{DenseMatrix, Vector};
use sparse_cert::linear_model::{
    compress_vector_effective_sparse, linear_adversarial_margin_with, BinaryLabel, LinearClassifier, MarginForm,
};
use sparse_cert::matrix_compress::{capacity_count, compress_with_plan, matrix_compress_detailed};
use sparse_cert::network::{error_schedule, Activation, LayeredNetwork};
use sparse_cert::norms::{linf_operator_norm, lp_norm, norm_1_1, norm_1_inf, NormOrder};
use sparse_cert::sparsity::{effective_joint_sparsity, effective_sparsity, SparsityProfile};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop_oneof![3 => -1.0f64..1.0, 1 => Just(0.0), 1 => -0.01f64..0.01], r * c)
            .prop_map(move |e| DenseMatrix::from_row_major(r, c, e).unwrap())
    })
}

fn rebalanced(max: usize) -> impl Strategy<Value = DenseMatrix<f64>> {
    matrix(max, max)
        .prop_filter("nonzero", |w| norm_1_inf(w) > 0.0)
        .prop_map(|w| w.scale(1.0 / norm_1_inf(&w)))
}

fn network(max_depth: usize, max_width: usize) -> impl Strategy<Value = LayeredNetwork<f64>> {
    prop::collection::vec(2..=max_width, 2..=max_depth + 1).prop_flat_map(|widths| {
        let layers: Vec<_> = widths
            .windows(2)
            .map(|p| prop::collection::vec(-1.0f64..1.0, p[0] * p[1]).prop_map({
                let (r, c) = (p[0], p[1]);
                move |e| DenseMatrix::from_row_major(r, c, e).unwrap()
            }))
            .collect();
        layers.prop_map(|l| LayeredNetwork::new(l, Activation::Identity).unwrap())
    })
}

fn unit_inputs(n: usize, rows: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0f64..=1.0, n * rows).prop_map(move |e| Array2::from_shape_vec((rows, n), e).unwrap())
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, j| if v[j] > v[b] { j } else { b })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn operator_norm_is_max_over_sign_vectors(w in matrix(6, 6)) {
        let n = w.rows();
        let best = (0u32..1 << n)
            .map(|mask| {
                let eta: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
                w.transpose_mul(&eta).unwrap().iter().fold(0.0f64, |a, v| a.max(v.abs()))
            })
            .fold(0.0f64, f64::max);
        let op = linf_operator_norm(&w);
        prop_assert!((best - op).abs() <= 1e-12 * op.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn lp_norm_is_nonincreasing_in_p(
        v in prop::collection::vec(-3.0f64..3.0, 1..20),
        p in 0.3f64..4.0,
        dq in 0.0f64..4.0,
    ) {
        let a = lp_norm(&v, NormOrder::Finite(p)).unwrap();
        let b = lp_norm(&v, NormOrder::Finite(p + dq)).unwrap();
        let c = lp_norm(&v, NormOrder::Infinity).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-12));
        prop_assert!(c <= b * (1.0 + 1e-12));
    }

    #[test]
    fn sparse_vectors_are_effectively_sparse(
        v in prop::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0], 1..30),
    ) {
        let s = v.iter().filter(|x| **x != 0.0).count().max(1);
        prop_assert!(effective_sparsity(&v) <= s as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn joint_sparsity_relates_mixed_norms(w in matrix(10, 10)) {
        let lhs = norm_1_1(&w);
        let rhs = effective_joint_sparsity(&w) * norm_1_inf(&w);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn linear_margin_is_corner_minimum(
        (w, x) in (1usize..=10).prop_flat_map(|n| (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..=1.0, n),
        )),
        eps in 0.0f64..0.5,
        code in 1u8..=2,
    ) {
        let n = w.len();
        let sign = if code == 2 { 1.0 } else { -1.0 };
        let corners = (0u32..1 << n)
            .map(|mask| sign * (0..n).map(|i| w[i] * (x[i] + if mask >> i & 1 == 1 { eps } else { -eps })).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let c = LinearClassifier::new(Vector::from_f64(&w).unwrap());
        let got = linear_adversarial_margin_with(&c, &x, BinaryLabel::from_code(code).unwrap(), eps, MarginForm::Infimum).unwrap();
        prop_assert!((got - corners).abs() <= 1e-12 * corners.abs().max(1.0));
    }

    #[test]
    fn effective_sparse_compression_moves_margins_by_at_most_gamma(
        w in prop::collection::vec(-1.0f64..1.0, 1..=10).prop_filter("nonzero", |w| w.iter().any(|v| *v != 0.0)),
        gamma in 0.01f64..1.0,
        eps in 0.0f64..0.5,
    ) {
        let l1: f64 = w.iter().map(|v| v.abs()).sum();
        let w: Vec<f64> = w.iter().map(|v| v / l1).collect();
        let c = LinearClassifier::new(Vector::from_f64(&w).unwrap());
        let hat = LinearClassifier::new(compress_vector_effective_sparse(&c, gamma, eps).unwrap());
        let n = w.len();
        for mask in 0u32..1 << n {
            let x: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            for code in 1..=2 {
                let y = BinaryLabel::from_code(code).unwrap();
                for form in [MarginForm::Factored, MarginForm::Infimum] {
                    let a = linear_adversarial_margin_with(&c, &x, y, eps, form).unwrap();
                    let b = linear_adversarial_margin_with(&hat, &x, y, eps, form).unwrap();
                    prop_assert!((a - b).abs() <= gamma * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn matrix_compression_guarantees(w in rebalanced(24), log_gamma in -6.0f64..1.0) {
        let gamma = log_gamma.exp();
        let c = matrix_compress_detailed(&w, gamma).unwrap();
        let hat = &c.compressed;
        prop_assert!(norm_1_inf(&w.sub(hat)) <= gamma);
        prop_assert!(hat.count_nonzero_columns() <= c.plan.s2);
        prop_assert!(hat.max_column_nonzeros() <= c.plan.s1);
        for &v in hat.as_array() {
            let k = v / c.plan.quant_step;
            prop_assert!((k - k.round()).abs() <= 1e-9 * k.abs().max(1.0));
        }
        let (s1, s2) = (c.plan.s1 as f64, c.plan.s2 as f64);
        let (n1, n2) = (w.rows() as f64, w.cols() as f64);
        let literal = s2 * (std::f64::consts::E * n2 / s2).ln()
            + s1 * s2 * (std::f64::consts::E * n1 / s1).ln()
            + s1 * s2 * (1.0 + 6.0 / gamma).ln();
        let count = capacity_count(c.plan.s1, c.plan.s2, w.rows(), w.cols(), gamma).unwrap();
        prop_assert!((count.log_card - literal).abs() <= 1e-12 * literal);
        prop_assert_eq!(&compress_with_plan(hat, &c.plan).unwrap().compressed, hat);
    }

    #[test]
    fn rebalancing_scales_margins(net in network(3, 8), x in prop::collection::vec(-1.0f64..=1.0, 8)) {
        let x = &x[..net.input_dim()];
        let (balanced, scale) = net.rebalance().unwrap();
        let a = net.scores(x).unwrap();
        let b = balanced.scores(x).unwrap();
        prop_assert_eq!(argmax(&a), argmax(&b));
        for y in 0..net.output_dim() {
            let m = net.margin(x, y).unwrap();
            let mb = balanced.margin(x, y).unwrap() * scale;
            prop_assert!((m - mb).abs() <= 1e-9 * m.abs().max(1e-12));
        }
    }

    #[test]
    fn schedule_spans_the_output_error(
        weights in prop::collection::vec((1.0f64..20.0, 1.0f64..40.0), 1..6),
        gamma in 0.01f64..4.0,
        frac in 0.0f64..0.99,
    ) {
        let eps = gamma / 4.0 * frac;
        let layers = weights
            .iter()
            .map(|&(column, joint)| sparse_cert::sparsity::LayerSparsity { column, joint })
            .collect();
        let s = error_schedule(&SparsityProfile::new(layers).unwrap(), gamma, eps).unwrap();
        let d = s.levels.len() - 1;
        prop_assert_eq!(s.levels[d] - s.levels[0], gamma / 2.0 - 2.0 * eps);
        prop_assert!(s.budgets.iter().all(|b| *b > 0.0));
    }

    #[test]
    fn attacks_stay_in_the_ball(
        net in network(2, 6),
        raw in unit_inputs(6, 4),
        eps in 0.0f64..0.5,
        steps in 1usize..6,
        seed in any::<u64>(),
    ) {
        let inputs = raw.slice(ndarray::s![.., ..net.input_dim()]).to_owned();
        let labels: Vec<usize> = (0..4).map(|i| i % net.output_dim()).collect();
        let cfg = AttackConfig::standard(eps, steps, seed);
        let out = pgd_batch(&net, inputs.view(), &labels, &[0, 1, 2, 3], &cfg).unwrap();
        prop_assert!(out.perturbations.iter().all(|v| v.abs() <= eps));
    }

    #[test]
    fn zero_budget_risk_is_the_error_rate(net in network(2, 6), raw in unit_inputs(6, 12)) {
        let inputs = raw.slice(ndarray::s![.., ..net.input_dim()]).to_owned();
        let k = net.output_dim();
        let labels: Vec<usize> = (0..12).map(|i| (i * 7) % k).collect();
        // a tie with the true class is not a correct prediction
        let wrong = (0..12)
            .filter(|&i| {
                let s = net.scores(&inputs.row(i).to_vec()).unwrap();
                (0..k).any(|j| j != labels[i] && s[j] >= s[labels[i]])
            })
            .count();
        let data = Dataset::new(inputs, labels, k).unwrap();
        let risk = adversarial_risk(&net, &data, 0.0, &AttackConfig::standard(0.0, 3, 0)).unwrap();
        prop_assert_eq!(risk.count, wrong);
    }

    #[test]
    fn idx_round_trip(
        (rows, cols, pixels, labels) in (1usize..6, 1usize..6, 0usize..5).prop_flat_map(|(r, c, n)| (
            Just(r),
            Just(c),
            prop::collection::vec(any::<u8>(), r * c * n),
            prop::collection::vec(0u8..10, n),
        )),
    ) {
        let raw = IdxImages { rows, cols, pixels, labels };
        let (mut im, mut lb) = (Vec::new(), Vec::new());
        write_idx(&raw, &mut im, &mut lb).unwrap();
        let back = read_idx(&im[..], &lb[..]).unwrap();
        prop_assert_eq!(&back, &raw);
        let (mut im2, mut lb2) = (Vec::new(), Vec::new());
        write_idx(&back, &mut im2, &mut lb2).unwrap();
        prop_assert_eq!((im, lb), (im2, lb2));
        if !raw.is_empty() {
            let data = prepare_idx(&raw).unwrap();
            prop_assert!(data.inputs().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
