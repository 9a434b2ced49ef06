use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sparse_cert::adversarial::{adversarial_margins, margin_risk, AttackConfig};
use sparse_cert::bound::{bound_network, empirical_bound_loss};
use sparse_cert::data_io::{load_idx, prepare_idx, Dataset};
use sparse_cert::matrix_compress::compress_with_plan;
use sparse_cert::model_io::{load_model, save_model};
use sparse_cert::network::{compress_network, probe_deviation, Activation, LayeredNetwork};
use sparse_cert::norms::norm_1_inf;
use sparse_cert::training::{init_network, train as run_training, EpochMetrics};
use sparse_cert::Error;

use crate::config::TrainFile;
use crate::error::CliError;
use crate::{AttackArgs, BoundArgs, CompressArgs, DataArgs, TrainArgs};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const METRICS_FORMAT: &str = "sparse-cert metrics v1";
pub const ATTACK_FORMAT: &str = "sparse-cert attack v1";
pub const BOUND_FORMAT: &str = "sparse-cert bound v1";
pub const AUDIT_FORMAT: &str = "sparse-cert compress-audit v1";

const PROBES: usize = 1000;

pub fn metrics_header(depth: usize) -> String {
    let mut cols: Vec<String> = [
        "epoch",
        "phase",
        "eps_attack",
        "train_loss",
        "clean_risk",
        "adv_risk",
        "bound_exact",
        "bound_surrogate",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for j in 1..=depth {
        cols.push(format!("eff_s1_{j}"));
        cols.push(format!("eff_s2_{j}"));
    }
    cols.join(",")
}

fn metrics_row(m: &EpochMetrics) -> String {
    let mut fields = vec![
        m.epoch.to_string(),
        m.phase.as_str().to_string(),
        m.eps_attack.to_string(),
        m.train_loss.to_string(),
        m.clean_risk.to_string(),
        m.adv_risk.to_string(),
        m.bound_exact.to_string(),
        m.bound_surrogate.to_string(),
    ];
    for l in &m.sparsity {
        fields.push(l.column.to_string());
        fields.push(l.joint.to_string());
    }
    fields.join(",")
}

fn comment_block(out: &mut impl Write, format: &str, seed: u64, config: &impl Serialize) -> io::Result<()> {
    writeln!(out, "# {format}")?;
    writeln!(out, "# tool_version={TOOL_VERSION}")?;
    writeln!(out, "# seed={seed}")?;
    writeln!(out, "# config={}", serde_json::to_string(config).expect("config serializes"))
}

fn load_dataset(images: Option<&Path>, labels: Option<&Path>) -> Result<Dataset<f64>, CliError> {
    let (Some(images), Some(labels)) = (images, labels) else {
        return Err(CliError::Config("both --data-images and --data-labels are required".into()));
    };
    let raw = load_idx(images, labels).map_err(|e| match e {
        Error::Io(io) => CliError::Data(format!("{} / {}: {io}", images.display(), labels.display())),
        other => other.into(),
    })?;
    let data = prepare_idx(&raw)?;
    if data.is_empty() {
        return Err(CliError::Data("dataset is empty".into()));
    }
    Ok(data)
}

fn load_args_dataset(d: &DataArgs) -> Result<Dataset<f64>, CliError> {
    load_dataset(d.data_images.as_deref(), d.data_labels.as_deref())
}

fn load_net(path: &Path) -> Result<LayeredNetwork<f32>, CliError> {
    load_model(path, Activation::Identity).map_err(|e| match e {
        Error::Io(io) => CliError::Data(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn check_input_dim<T>(net: &LayeredNetwork<f32>, data: &Dataset<T>) -> Result<(), CliError>
where
    T: sparse_cert::Scalar,
{
    if net.input_dim() != data.input_dim() {
        return Err(CliError::Data(format!(
            "model expects {} inputs but the data has {}",
            net.input_dim(),
            data.input_dim()
        )));
    }
    if data.class_count() > net.output_dim() {
        return Err(CliError::Data(format!(
            "model has {} outputs but the data has {} classes",
            net.output_dim(),
            data.class_count()
        )));
    }
    Ok(())
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut file = match &args.config {
        Some(path) => {
            let mut f = TrainFile::load(path)?;
            f.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
            f
        }
        None => TrainFile::default(),
    };
    file.apply_flags(&args.data, args.seed, args.out.as_deref());
    file.validate()?;
    let mut data = load_dataset(file.data.images.as_deref(), file.data.labels.as_deref())?;
    if let Some(n) = file.data.limit {
        data = data.head(n);
    }
    if data.input_dim() != file.widths[0] || data.class_count() > file.widths[file.widths.len() - 1] {
        return Err(CliError::Config(format!(
            "widths {:?} do not fit {} inputs and {} classes",
            file.widths,
            data.input_dim(),
            data.class_count()
        )));
    }
    let data = data.cast::<f32>();
    fs::create_dir_all(&file.out)?;
    let metrics_path = file.out.join("metrics.csv");
    let model_path = file.out.join("model.esnn");
    let mut csv = BufWriter::new(File::create(&metrics_path)?);
    comment_block(&mut csv, METRICS_FORMAT, file.training.seed, &file)?;
    writeln!(csv, "{}", metrics_header(file.widths.len() - 1))?;
    let net = init_network::<f32>(&file.widths, file.training.seed)?;
    let mut write_err = None;
    let outcome = run_training(net, &data, &file.training, |m, _| {
        eprintln!(
            "epoch {:>3} {:<11} loss {:.4} clean {:.4} adv {:.4} bound {:.4}",
            m.epoch,
            m.phase.as_str(),
            m.train_loss,
            m.clean_risk,
            m.adv_risk,
            m.bound_exact
        );
        if write_err.is_none() {
            write_err = writeln!(csv, "{}", metrics_row(m)).and_then(|_| csv.flush()).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_model(&outcome.network, &model_path)?;
    println!("{}", metrics_path.display());
    println!("{}", model_path.display());
    Ok(())
}

pub fn bound(args: BoundArgs) -> Result<(), CliError> {
    let net = load_net(&args.model)?;
    let data = load_args_dataset(&args.data)?.cast::<f32>();
    check_input_dim(&net, &data)?;
    let attack = AttackConfig::standard(args.eps, args.steps, args.seed);
    let loss = empirical_bound_loss(&net, &data, args.gamma, &attack)?;
    let report = bound_network(&net, args.gamma, args.eps, data.len(), loss)?;
    let doc = json!({
        "format": BOUND_FORMAT,
        "tool_version": TOOL_VERSION,
        "seed": args.seed,
        "config": {
            "model": args.model,
            "data_images": args.data.data_images,
            "data_labels": args.data.data_labels,
            "gamma": args.gamma,
            "eps": args.eps,
            "attack": attack,
            "final_activation": "relu",
        },
        "loss_note": "empirical adversarial margin loss from PGD margins; exact when gamma >= scale * max ||x||_inf",
        "report": report,
    });
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"))
}

pub fn compress(args: CompressArgs) -> Result<(), CliError> {
    let net = load_net(&args.model)?.cast::<f64>().analysed_form();
    let (balanced, scale) = net.rebalance()?;
    let gamma = args.gamma / scale;
    let result = compress_network(&balanced, gamma, args.eps).map_err(|e| match e {
        Error::Precondition(msg) => CliError::Core(Error::Precondition(format!(
            "{msg}; --gamma {} is divided by the rebalancing scale {scale}",
            args.gamma
        ))),
        other => other.into(),
    })?;
    let mut layers = Vec::new();
    for (i, ((w, c), &budget)) in balanced
        .layers()
        .iter()
        .zip(&result.layers)
        .zip(&result.schedule.budgets)
        .enumerate()
    {
        let deviation = norm_1_inf(&w.sub(&c.compressed));
        let again = compress_with_plan(&c.compressed, &c.plan)?;
        layers.push(json!({
            "layer": i + 1,
            "budget": budget,
            "deviation": deviation,
            "within_budget": deviation <= budget,
            "recompress_deviation": norm_1_inf(&c.compressed.sub(&again.compressed)),
            "s1": c.plan.s1,
            "s2": c.plan.s2,
            "quant_step": c.plan.quant_step,
            "log_card": c.capacity.log_card,
            "nonzeros": c.compressed.to_row_major().iter().filter(|v| **v != 0.0).count(),
        }));
    }
    let probes = probe_deviation(&balanced, &result.network, PROBES, args.eps, args.seed)?;
    save_model(&result.network, &args.out)?;
    let doc = json!({
        "format": AUDIT_FORMAT,
        "tool_version": TOOL_VERSION,
        "seed": args.seed,
        "config": { "model": args.model, "gamma": args.gamma, "eps": args.eps, "out": args.out },
        "scale": scale,
        "gamma_rebalanced": gamma,
        "output_units": "rebalanced; multiply scores by scale for the original units",
        "schedule": result.schedule,
        "log_card": result.capacity.log_card,
        "layers": layers,
        "probes": probes,
        "output_deviation_limit": gamma / 2.0,
        "output_within_limit": probes.max_output_deviation <= gamma / 2.0,
    });
    let text = serde_json::to_string_pretty(&doc).expect("serializes") + "\n";
    fs::write(audit_path(&args.out), &text)?;
    io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

pub fn audit_path(model_out: &Path) -> PathBuf {
    let mut s = model_out.as_os_str().to_owned();
    s.push(".audit.json");
    PathBuf::from(s)
}

pub fn attack(args: AttackArgs) -> Result<(), CliError> {
    let net = load_net(&args.model)?;
    let data = load_args_dataset(&args.data)?.cast::<f32>();
    check_input_dim(&net, &data)?;
    let cfg = AttackConfig::standard(args.eps, args.steps, args.seed);
    let clean = adversarial_margins(&net, &data, &AttackConfig::standard(0.0, 1, args.seed))?;
    let adv = adversarial_margins(&net, &data, &cfg)?;
    let clean_risk = margin_risk(&clean, 0.0, 0.0)?;
    let adv_risk = margin_risk(&adv, 0.0, args.eps)?;
    let config = json!({
        "model": args.model,
        "data_images": args.data.data_images,
        "data_labels": args.data.data_labels,
        "attack": cfg,
    });
    let mut text = Vec::new();
    comment_block(&mut text, ATTACK_FORMAT, args.seed, &config)?;
    writeln!(
        text,
        "# m={} clean_risk={} adv_risk={}",
        data.len(),
        clean_risk.value,
        adv_risk.value
    )?;
    writeln!(text, "index,label,clean_margin,adv_margin")?;
    for (i, (c, a)) in clean.iter().zip(&adv).enumerate() {
        writeln!(text, "{i},{},{c},{a}", data.labels()[i])?;
    }
    let text = String::from_utf8(text).expect("ascii");
    write_output(args.out.as_deref(), &text)?;
    if args.out.is_some() {
        println!(
            "{}",
            json!({ "m": data.len(), "eps": args.eps, "clean_risk": clean_risk.value, "adv_risk": adv_risk.value })
        );
    }
    Ok(())
}
