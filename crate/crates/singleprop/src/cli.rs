//! Command-line front end: JSON run configs in, checkpoints/CSV/JSON
//! artifacts out. Exit codes: 0 success, 2 user or config error,
//! 3 numeric failure during training.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::autograd::TrainVariant;
use crate::data::{load_mnist_idx, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    approx_error_metrics, benchmark, certified_accuracy_sweep, complement_union,
    CertificationRecord, SweepResult, Verdict, Verifier,
};
use crate::ibp::PerturbationSpec;
use crate::linear_bounds::RelaxMode;
use crate::network::{ArchSpec, Network};
use crate::train::{train, EpsSchedule, LambdaSchedule, TrainConfig};

/// Everything a training run needs; serialized back out verbatim as the
/// resolved-config snapshot so runs can be replayed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// "mnist_mlp", "tiny_conv", or "mlp:<in>:<d1-d2-...>".
    pub arch: String,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub train: TrainConfig,
    /// Weight-init seed; defaults to the training seed.
    #[serde(default)]
    pub init_seed: Option<u64>,
}

/// Accepts the named presets plus an inline MLP description such as
/// "mlp:16:32-10" (input 16, hidden 32, output 10).
pub fn parse_arch(name: &str) -> Result<ArchSpec> {
    if let Some(spec) = ArchSpec::preset(name) {
        return Ok(spec);
    }
    if let Some(rest) = name.strip_prefix("mlp:") {
        let mut parts = rest.splitn(2, ':');
        let input = parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&d| d > 0);
        let dims: Option<Vec<usize>> = parts.next().map(|s| {
            s.split('-')
                .map(|d| d.parse::<usize>().ok().filter(|&v| v > 0))
                .collect::<Option<Vec<_>>>()
                .unwrap_or_default()
        });
        if let (Some(input), Some(dims)) = (input, dims) {
            if !dims.is_empty() {
                return Ok(ArchSpec::mlp(input, &dims));
            }
        }
    }
    Err(Error::InvalidConfig(format!(
        "unknown architecture {name:?}; expected mnist_mlp, tiny_conv, or mlp:<in>:<d1-d2-...>"
    )))
}

#[derive(Parser)]
#[command(
    name = "singleprop",
    about = "Certified robust training with single-propagation bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Certify test points at a grid of perturbation radii.
    Certify(CertifyArgs),
    /// Time two training variants on identical work.
    Benchmark(BenchmarkArgs),
    /// Verifier-midpoint approximation error on sampled points.
    ApproxError(ApproxArgs),
    /// Set arithmetic between two certification CSVs.
    Complement(ComplementArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to a RunConfig JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints, metrics, and the config snapshot.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    /// Saved model checkpoint (JSON).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Comma-separated ascending ε values, e.g. "0,0.05,0.1".
    #[arg(long)]
    eps: String,
    #[arg(long)]
    verifier: Verifier,
    /// Number of test points to sample.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clamp perturbed inputs to [0,1] (IBP only).
    #[arg(long)]
    clip_input: bool,
    /// Certification CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "mnist_mlp")]
    arch: String,
    #[arg(long, default_value = "single_prop_zero")]
    variant_a: String,
    #[arg(long, default_value = "ibp")]
    variant_b: String,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Validation examples withheld (excluded from timed steps).
    #[arg(long, default_value_t = 0)]
    val_split: usize,
    /// BenchReport pair as JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApproxArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    eps: f64,
    /// Relaxation for the verifier: fastlin or zero.
    #[arg(long, default_value = "zero")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics report as JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ComplementArgs {
    /// First certification CSV.
    #[arg(long)]
    a: PathBuf,
    /// Second certification CSV (same points, same ε grid).
    #[arg(long)]
    b: PathBuf,
    /// ε column to compare at.
    #[arg(long)]
    eps: f64,
}

/// Parse argv and run; the returned code is the process exit status.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Certify(args) => cmd_certify(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
        Command::ApproxError(args) => cmd_approx_error(&args),
        Command::Complement(args) => cmd_complement(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::InvalidConfig(format!("{}: {:?}", path.display(), other)),
    }
}

fn load_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    load_mnist_idx(images, labels)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg: RunConfig = read_json(&args.config)?;
    cfg.train.validate()?;
    let arch = parse_arch(&cfg.arch)?;
    let data = load_dataset(&cfg.train_images, &cfg.train_labels)?;
    let init_seed = cfg.init_seed.unwrap_or(cfg.train.seed);
    let net = Network::init(&arch, init_seed)?;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_json(&args.out.join("resolved_config.json"), &cfg)?;

    println!(
        "training {:?} on {} examples ({} epochs, batch {})",
        cfg.train.variant,
        data.len(),
        cfg.train.epochs,
        cfg.train.batch_size
    );
    let outcome = train(net, &data, &cfg.train)?;

    let metrics_path = args.out.join("metrics.csv");
    let mut writer = csv::Writer::from_path(&metrics_path).map_err(|e| csv_err(&metrics_path, e))?;
    for row in &outcome.metrics {
        writer.serialize(row).map_err(|e| csv_err(&metrics_path, e))?;
        println!(
            "epoch {:>3}  loss {:.4}  reg {:.4}  val_acc {:.4}  val_cert {:.4}  ({:.1}s)",
            row.epoch, row.train_loss, row.reg_loss, row.val_acc, row.val_cert_acc, row.wallclock_s
        );
    }
    writer.flush().map_err(|e| io_err(&metrics_path, e))?;

    outcome.final_net.save(args.out.join("model_final.json"))?;
    outcome.best_net.save(args.out.join("model_best.json"))?;

    if let Some(fail) = &outcome.failure {
        // artifacts above hold the last good state; surface the abort
        return Err(Error::NumericFailure {
            context: "training aborted",
            layer: fail.epoch,
        });
    }
    println!("best epoch {} (checkpoint model_best.json)", outcome.best_epoch);
    Ok(())
}

fn parse_eps_list(text: &str) -> Result<Vec<f64>> {
    let eps: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidConfig(format!("bad ε list {text:?}: {e}")))?;
    if eps.is_empty() {
        return Err(Error::InvalidConfig("empty ε list".into()));
    }
    Ok(eps)
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Certified => "certified",
        Verdict::NotCertified => "not_certified",
        Verdict::Misclassified => "misclassified",
    }
}

fn parse_verdict(s: &str) -> Result<Verdict> {
    match s {
        "certified" => Ok(Verdict::Certified),
        "not_certified" => Ok(Verdict::NotCertified),
        "misclassified" => Ok(Verdict::Misclassified),
        other => Err(Error::InvalidConfig(format!("bad verdict {other:?}"))),
    }
}

fn write_certification_csv(path: &Path, sweep: &SweepResult, eps_list: &[f64]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec![
        "point_index".to_string(),
        "true_label".to_string(),
        "clean_correct".to_string(),
    ];
    header.extend(eps_list.iter().map(|e| format!("eps_{e}")));
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in &sweep.records {
        let mut row = vec![
            r.point_index.to_string(),
            r.true_label.to_string(),
            r.clean_correct().to_string(),
        ];
        row.extend(r.verdicts.iter().map(|(_, v)| verdict_str(*v).to_string()));
        writer.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

fn read_certification_csv(path: &Path) -> Result<Vec<CertificationRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut eps_cols = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        if let Some(rest) = name.strip_prefix("eps_") {
            let eps = rest.parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("{}: bad ε column {name:?}", path.display()))
            })?;
            eps_cols.push((idx, eps));
        }
    }
    if eps_cols.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{}: no ε columns found",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| -> Result<&str> {
            row.get(i).ok_or_else(|| {
                Error::InvalidConfig(format!("{}: short row", path.display()))
            })
        };
        let point_index: usize = field(0)?.parse().map_err(|_| {
            Error::InvalidConfig(format!("{}: bad point_index", path.display()))
        })?;
        let true_label: usize = field(1)?.parse().map_err(|_| {
            Error::InvalidConfig(format!("{}: bad true_label", path.display()))
        })?;
        let clean: bool = field(2)?.parse().map_err(|_| {
            Error::InvalidConfig(format!("{}: bad clean_correct", path.display()))
        })?;
        let mut verdicts = Vec::with_capacity(eps_cols.len());
        for &(idx, eps) in &eps_cols {
            verdicts.push((eps, parse_verdict(field(idx)?)?));
        }
        records.push(CertificationRecord {
            point_index,
            true_label,
            // the CSV stores correctness, not the raw prediction
            predicted_label: if clean { true_label } else { true_label.wrapping_add(1) },
            verdicts,
            verifier: Verifier::Ibp,
        });
    }
    Ok(records)
}

fn cmd_certify(args: &CertifyArgs) -> Result<()> {
    let eps_list = parse_eps_list(&args.eps)?;
    let net = Network::load(&args.model)?;
    let data = load_dataset(&args.images, &args.labels)?;
    let sweep = certified_accuracy_sweep(
        &net,
        &data,
        &eps_list,
        args.verifier,
        args.points,
        args.seed,
        args.clip_input,
    )?;
    write_certification_csv(&args.out, &sweep, &eps_list)?;
    println!(
        "verifier {}  points {}  clean accuracy {:.4}",
        args.verifier,
        sweep.records.len(),
        sweep.clean_accuracy
    );
    println!("{:>10}  {:>10}", "eps", "certified");
    for (eps, frac) in &sweep.summary {
        println!("{eps:>10}  {frac:>10.4}");
    }
    Ok(())
}

fn variant_from_name(name: &str) -> Result<TrainVariant> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Error::InvalidConfig(format!("unknown variant {name:?}")))
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let arch = parse_arch(&args.arch)?;
    let data = load_dataset(&args.images, &args.labels)?;
    let base = TrainConfig {
        variant: TrainVariant::Standard,
        eps_schedule: EpsSchedule::constant(args.eps),
        lambda_schedule: LambdaSchedule::Linear {
            start: 0.5,
            end: 0.5,
            ramp_steps: 0,
        },
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: 1e-3,
        lr_decay_milestones: vec![],
        seed: args.seed,
        clip_input: true,
        val_split: args.val_split,
    };
    let cfg_a = TrainConfig {
        variant: variant_from_name(&args.variant_a)?,
        ..base.clone()
    };
    let cfg_b = TrainConfig {
        variant: variant_from_name(&args.variant_b)?,
        ..base
    };
    let pair = benchmark(&arch, &data, &cfg_a, &cfg_b, args.seed)?;
    write_json(&args.out, &pair)?;
    println!(
        "{}: {} fwd / {} bwd per example-step, {:.2}s per epoch",
        args.variant_a,
        pair.a.fwd_passes_per_example_step,
        pair.a.bwd_passes_per_example_step,
        pair.a.wallclock_per_epoch_s
    );
    println!(
        "{}: {} fwd / {} bwd per example-step, {:.2}s per epoch",
        args.variant_b,
        pair.b.fwd_passes_per_example_step,
        pair.b.bwd_passes_per_example_step,
        pair.b.wallclock_per_epoch_s
    );
    println!("wall-clock ratio b/a: {:.3}", pair.wallclock_ratio_b_over_a);
    Ok(())
}

fn cmd_approx_error(args: &ApproxArgs) -> Result<()> {
    let mode = match args.mode.as_str() {
        "fastlin" => RelaxMode::FastLin,
        "zero" => RelaxMode::Zero,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown mode {other:?}; expected fastlin or zero"
            )))
        }
    };
    let net = Network::load(&args.model)?;
    let data = load_dataset(&args.images, &args.labels)?;
    let pert = PerturbationSpec::new(args.eps)?;

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut rand_chacha::ChaCha12Rng::seed_from_u64(args.seed));
    indices.truncate(args.points.min(data.len()));
    let points: Vec<_> = indices.iter().map(|&i| data.image(i).clone()).collect();

    let report = approx_error_metrics(&net, &points, &pert, mode)?;
    write_json(&args.out, &report)?;
    println!(
        "metric1 {:.6} ± {:.6}   metric2 {:.6} ± {:.6}   ({} points)",
        report.metric1_mean, report.metric1_std, report.metric2_mean, report.metric2_std,
        report.points
    );
    Ok(())
}

fn cmd_complement(args: &ComplementArgs) -> Result<()> {
    let a = read_certification_csv(&args.a)?;
    let b = read_certification_csv(&args.b)?;
    let u = complement_union(&a, &b, args.eps)?;
    println!("certified by A:      {:.4}", u.frac_a);
    println!("certified by B:      {:.4}", u.frac_b);
    println!("certified by either: {:.4}", u.frac_union);
    println!("both correct:        {:.4}", u.frac_both_correct);
    println!("either ∩ correct:    {:.4}", u.frac_union_within_both_correct);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_strings_parse() {
        assert!(parse_arch("mnist_mlp").is_ok());
        assert!(parse_arch("tiny_conv").is_ok());
        let spec = parse_arch("mlp:16:32-10").unwrap();
        assert_eq!(spec.input.dim(), 16);
        assert!(parse_arch("mlp:0:4").is_err());
        assert!(parse_arch("mlp:16:").is_err());
        assert!(parse_arch("resnet50").is_err());
    }

    #[test]
    fn eps_lists_parse() {
        assert_eq!(parse_eps_list("0,0.05,0.1").unwrap(), vec![0.0, 0.05, 0.1]);
        assert_eq!(parse_eps_list(" 0.3 ").unwrap(), vec![0.3]);
        assert!(parse_eps_list("a,b").is_err());
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!(variant_from_name("ibp").unwrap(), TrainVariant::Ibp);
        assert_eq!(
            variant_from_name("single_prop_zero").unwrap(),
            TrainVariant::SinglePropZero
        );
        assert!(variant_from_name("bogus").is_err());
    }

    #[test]
    fn verdict_round_trip() {
        for v in [Verdict::Certified, Verdict::NotCertified, Verdict::Misclassified] {
            assert_eq!(parse_verdict(verdict_str(v)).unwrap(), v);
        }
        assert!(parse_verdict("maybe").is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        let text = r#"{
            "arch": "mnist_mlp",
            "train_images": "i",
            "train_labels": "l",
            "trian": {},
            "train": null
        }"#;
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_str(text);
        assert!(parsed.is_err());
    }
}
