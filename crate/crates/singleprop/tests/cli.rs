//! Black-box tests of the `singleprop` binary: artifact layout, exit
//! codes, and determinism, over small synthetic IDX datasets.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_singleprop"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should execute")
}

fn write_be_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_be_bytes());
}

/// 4×4 images in three classes; class c lights up row c with high
/// intensity, which a small MLP separates quickly.
fn write_idx_pair(dir: &Path, stem: &str, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut image_bytes = Vec::new();
    write_be_u32(&mut image_bytes, 0x0000_0803);
    write_be_u32(&mut image_bytes, n as u32);
    write_be_u32(&mut image_bytes, 4);
    write_be_u32(&mut image_bytes, 4);
    let mut label_bytes = Vec::new();
    write_be_u32(&mut label_bytes, 0x0000_0801);
    write_be_u32(&mut label_bytes, n as u32);

    for i in 0..n {
        let class = i % 3;
        for row in 0..4 {
            for _col in 0..4 {
                let v: u8 = if row == class {
                    rng.gen_range(200..=255)
                } else {
                    rng.gen_range(0..=40)
                };
                image_bytes.push(v);
            }
        }
        label_bytes.push(class as u8);
    }

    let images = dir.join(format!("{stem}-images-idx3-ubyte"));
    let labels = dir.join(format!("{stem}-labels-idx1-ubyte"));
    fs::File::create(&images)
        .unwrap()
        .write_all(&image_bytes)
        .unwrap();
    fs::File::create(&labels)
        .unwrap()
        .write_all(&label_bytes)
        .unwrap();
    (images, labels)
}

fn train_config_json(images: &Path, labels: &Path, lr: f64) -> String {
    format!(
        r#"{{
  "arch": "mlp:16:12-10",
  "train_images": {images:?},
  "train_labels": {labels:?},
  "train": {{
    "variant": "single_prop_zero",
    "eps_schedule": {{ "warmup_steps": 2, "ramp_end_steps": 8, "target": 0.05 }},
    "lambda_schedule": {{ "kind": "ahs", "gamma": 1.0 }},
    "epochs": 3,
    "batch_size": 8,
    "learning_rate": {lr},
    "seed": 4,
    "val_split": 9
  }}
}}"#
    )
}

struct TrainedRun {
    _tmp: tempfile::TempDir,
    out: PathBuf,
    images: PathBuf,
    labels: PathBuf,
}

fn train_once(lr: f64) -> (TrainedRun, Output) {
    let tmp = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx_pair(tmp.path(), "train", 48, 1);
    let config = tmp.path().join("run.json");
    fs::write(&config, train_config_json(&images, &labels, lr)).unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    (
        TrainedRun {
            _tmp: tmp,
            out,
            images,
            labels,
        },
        output,
    )
}

#[test]
fn train_writes_all_artifacts() {
    let (ctx, output) = train_once(5e-3);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    for name in [
        "resolved_config.json",
        "model_best.json",
        "model_final.json",
        "metrics.csv",
    ] {
        assert!(ctx.out.join(name).exists(), "missing {name}");
    }
    let metrics = fs::read_to_string(ctx.out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "epoch,step,eps,lambda,train_loss,reg_loss,val_acc,val_cert_acc,wallclock_s,fwd_pass_count,bwd_pass_count"
    );
    assert_eq!(lines.count(), 3, "one row per epoch");
}

#[test]
fn train_metrics_are_deterministic_across_reruns() {
    let (_ctx_a, out_a) = train_once(5e-3);
    let (_ctx_b, out_b) = train_once(5e-3);
    assert!(out_a.status.success() && out_b.status.success());

    let read = |ctx: &TrainedRun| fs::read_to_string(ctx.out.join("metrics.csv")).unwrap();
    let a = read(&_ctx_a);
    let b = read(&_ctx_b);
    let strip_wallclock = |text: &str| -> Vec<Vec<String>> {
        text.lines()
            .map(|line| {
                line.split(',')
                    .enumerate()
                    .filter(|(i, _)| *i != 8) // wallclock_s is measured, not derived
                    .map(|(_, f)| f.to_string())
                    .collect()
            })
            .collect()
    };
    assert_eq!(strip_wallclock(&a), strip_wallclock(&b));
}

#[test]
fn unknown_variant_name_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx_pair(tmp.path(), "train", 24, 2);
    let config = tmp.path().join("run.json");
    let text = train_config_json(&images, &labels, 1e-3).replace("single_prop_zero", "turbo_prop");
    fs::write(&config, text).unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("variant"), "stderr names the bad field: {stderr}");
}

#[test]
fn numeric_failure_exits_three_but_keeps_artifacts() {
    let (ctx, output) = train_once(1e160);
    assert_eq!(output.status.code(), Some(3));
    assert!(ctx.out.join("model_final.json").exists());
    assert!(ctx.out.join("metrics.csv").exists());
}

#[test]
fn certify_writes_one_verdict_column_per_eps() {
    let (ctx, output) = train_once(5e-3);
    assert!(output.status.success());
    let model = ctx.out.join("model_final.json");
    let csv_path = ctx.out.join("cert.csv");
    let output = run(&[
        "certify",
        "--model",
        model.to_str().unwrap(),
        "--images",
        ctx.images.to_str().unwrap(),
        "--labels",
        ctx.labels.to_str().unwrap(),
        "--eps",
        "0,0.05,0.1",
        "--verifier",
        "fastlin",
        "--points",
        "20",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let text = fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "point_index,true_label,clean_correct,eps_0,eps_0.05,eps_0.1"
    );
    assert_eq!(lines.count(), 20);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("clean accuracy"), "summary on stdout: {stdout}");
}

#[test]
fn certify_rejects_unknown_verifier() {
    let (ctx, _) = train_once(5e-3);
    let model = ctx.out.join("model_final.json");
    let output = run(&[
        "certify",
        "--model",
        model.to_str().unwrap(),
        "--images",
        ctx.images.to_str().unwrap(),
        "--labels",
        ctx.labels.to_str().unwrap(),
        "--eps",
        "0.1",
        "--verifier",
        "bogus",
        "--out",
        "/tmp/unused.csv",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn complement_of_a_csv_with_itself_matches_individual() {
    let (ctx, output) = train_once(5e-3);
    assert!(output.status.success());
    let model = ctx.out.join("model_final.json");
    let csv_path = ctx.out.join("cert.csv");
    let status = run(&[
        "certify",
        "--model",
        model.to_str().unwrap(),
        "--images",
        ctx.images.to_str().unwrap(),
        "--labels",
        ctx.labels.to_str().unwrap(),
        "--eps",
        "0.02,0.05",
        "--verifier",
        "zero",
        "--points",
        "30",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(status.status.success());

    let output = run(&[
        "complement",
        "--a",
        csv_path.to_str().unwrap(),
        "--b",
        csv_path.to_str().unwrap(),
        "--eps",
        "0.05",
    ]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let grab = |tag: &str| -> f64 {
        stdout
            .lines()
            .find(|l| l.starts_with(tag))
            .and_then(|l| l.rsplit(' ').next())
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("missing {tag} in: {stdout}"))
    };
    let a = grab("certified by A:");
    let u = grab("certified by either:");
    assert_eq!(a, u, "self-union equals the set");
}

#[test]
fn benchmark_emits_pass_count_json() {
    let tmp = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx_pair(tmp.path(), "bench", 24, 3);
    let json_path = tmp.path().join("bench.json");
    let output = run(&[
        "benchmark",
        "--images",
        images.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--arch",
        "mlp:16:8-10",
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--eps",
        "0.05",
        "--out",
        json_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(parsed["a"]["fwd_passes_per_example_step"], 2);
    assert_eq!(parsed["b"]["fwd_passes_per_example_step"], 3);
    assert!(parsed["wallclock_ratio_b_over_a"].as_f64().unwrap() > 0.0);
}

#[test]
fn approx_error_reports_metrics_json() {
    let (ctx, output) = train_once(5e-3);
    assert!(output.status.success());
    let model = ctx.out.join("model_final.json");
    let json_path = ctx.out.join("approx.json");
    let output = run(&[
        "approx-error",
        "--model",
        model.to_str().unwrap(),
        "--images",
        ctx.images.to_str().unwrap(),
        "--labels",
        ctx.labels.to_str().unwrap(),
        "--eps",
        "0.03",
        "--mode",
        "zero",
        "--points",
        "16",
        "--out",
        json_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    assert!(parsed["metric1_mean"].as_f64().unwrap() >= 0.0);
    assert!(parsed["metric2_mean"].as_f64().unwrap() >= 0.0);
    assert_eq!(parsed["points"], 16);
}
