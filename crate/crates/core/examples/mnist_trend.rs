//! Trains the 1024-500-150-10 network on the bundled MNIST subset and prints
//! per-epoch metrics.
//! Usage: `mnist_trend [seed] [adversarial|standard] [learning_rate]`.

use std::time::Instant;

use sparse_cert::data_io::{load_idx, preprocess_mnist};
use sparse_cert::training::{init_network, train, TrainingConfig};

fn main() -> sparse_cert::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let adversarial = args.next().as_deref() != Some("standard");
    let learning_rate: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");
    let raw = load_idx(
        format!("{dir}/mnist10k-images-idx3-ubyte.gz"),
        format!("{dir}/mnist10k-labels-idx1-ubyte.gz"),
    )?;
    let data = preprocess_mnist(&raw)?.cast::<f32>();
    let cfg = TrainingConfig {
        seed,
        adversarial_phase_start: if adversarial { 0.5 } else { 1.0 },
        learning_rate,
        ..TrainingConfig::default()
    };
    let net = init_network::<f32>(&[1024, 500, 150, 10], seed)?;
    let start = Instant::now();
    train(net, &data, &cfg, |m, _| {
        let sp: Vec<String> = m
            .sparsity
            .iter()
            .map(|l| format!("{:.1}/{:.1}", l.column, l.joint))
            .collect();
        println!(
            "{:>3} {:<11} eps={:.3} loss={:.4} clean={:.4} adv={:.4} bound={:.3} surr={:.3} [{}] {:.0}s",
            m.epoch,
            m.phase.as_str(),
            m.eps_attack,
            m.train_loss,
            m.clean_risk,
            m.adv_risk,
            m.bound_exact,
            m.bound_surrogate,
            sp.join(" "),
            start.elapsed().as_secs_f64()
        );
    })?;
    Ok(())
}
