//! Black-box CLI checks: subcommand wiring, exit codes and artifact bytes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mobincep"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mobincep-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_args<'a>(out: &'a str, seed: &'a str) -> Vec<&'a str> {
    vec![
        "--seed",
        seed,
        "--out",
        out,
        "--set",
        "width_divisor=8",
        "--set",
        "input_size=32",
        "--set",
        "synth_size=32",
        "--set",
        "synth_domains=2",
        "--set",
        "synth_classes=2,2",
        "--set",
        "synth_per_class=10",
        "--set",
        "epochs=1",
        "--set",
        "batch_size=8",
        "--set",
        "augment=false",
    ]
}

#[test]
fn train_succeeds_and_writes_run_directory() {
    let out = tmpdir("train");
    let out_str = out.display().to_string();
    let mut args = vec!["train", "--gamma1", "0", "--gamma2", "0"];
    args.extend(tiny_args(&out_str, "5"));
    let result = run(&args);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    for file in ["best.mbcp", "loss.csv", "metrics.csv", "config.txt"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    // the gamma flags reached the config snapshot and zeroed the terms
    let snapshot = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(snapshot.contains("gamma1 = 0"), "{snapshot}");
    let loss_csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    for line in loss_csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn deterministic_flag_reproduces_loss_csv_bitwise() {
    let a = tmpdir("det-a");
    let b = tmpdir("det-b");
    let (sa, sb) = (a.display().to_string(), b.display().to_string());
    for out in [&sa, &sb] {
        let mut args = vec!["train", "--deterministic"];
        args.extend(tiny_args(out, "9"));
        let result = run(&args);
        assert!(
            result.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    assert_eq!(
        std::fs::read(a.join("loss.csv")).unwrap(),
        std::fs::read(b.join("loss.csv")).unwrap()
    );
}

#[test]
fn evaluate_same_checkpoint_twice_yields_identical_csv_bytes() {
    let train_out = tmpdir("eval-train");
    let train_str = train_out.display().to_string();
    let mut args = vec!["train"];
    args.extend(tiny_args(&train_str, "7"));
    assert!(run(&args).status.success());

    let ckpt = train_out.join("best.mbcp");
    let ckpt_str = ckpt.display().to_string();
    let mut outputs = Vec::new();
    for tag in ["eval-a", "eval-b"] {
        let out = tmpdir(tag);
        let out_str = out.display().to_string();
        let mut args = vec!["evaluate", "--checkpoint", &ckpt_str, "--part", "test"];
        args.extend(tiny_args(&out_str, "7"));
        let result = run(&args);
        assert!(
            result.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&result.stderr)
        );
        outputs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    // evaluating the exported test.idx reproduces the --part test bytes
    let idx = train_out.join("test.idx");
    let idx_str = idx.display().to_string();
    let out = tmpdir("eval-idx");
    let out_str = out.display().to_string();
    let mut args = vec!["evaluate", "--checkpoint", &ckpt_str, "--indices", &idx_str];
    args.extend(tiny_args(&out_str, "7"));
    assert!(run(&args).status.success());
    assert_eq!(std::fs::read(out.join("metrics.csv")).unwrap(), outputs[0]);
}

#[test]
fn synth_writes_directory_layout_and_predict_reads_it() {
    let data = tmpdir("synth-data");
    let data_str = data.display().to_string();
    let result = run(&[
        "synth",
        "--dir",
        &data_str,
        "--seed",
        "3",
        "--set",
        "synth_domains=2",
        "--set",
        "synth_classes=2,2",
        "--set",
        "synth_per_class=3",
        "--set",
        "synth_size=32",
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(data.join("domain0").join("class0").exists());

    // train a tiny model, then predict one of the generated files
    let train_out = tmpdir("synth-train");
    let train_str = train_out.display().to_string();
    let mut args = vec!["train"];
    args.extend(tiny_args(&train_str, "3"));
    assert!(run(&args).status.success());

    let ckpt = train_out.join("best.mbcp").display().to_string();
    let img = data.join("domain0").join("class0").join("img_000.png");
    let img_str = img.display().to_string();
    let result = run(&[
        "predict",
        "--checkpoint",
        &ckpt,
        "--input-size",
        "32",
        &img_str,
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("img_000.png"), "{stdout}");
    assert!(stdout.contains('['), "probability vector missing: {stdout}");
}

#[test]
fn failures_exit_nonzero_with_error_lines() {
    // unreadable checkpoint
    let result = run(&["predict", "--checkpoint", "/nonexistent.mbcp", "x.png"]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).starts_with("error:"));

    // bad config value
    let result = run(&["train", "--set", "batch_size=zero"]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("error:"));

    // bad split flag
    let result = run(&["train", "--split", "50/30/30"]);
    assert!(!result.status.success());
}

#[test]
fn gradcheck_subcommand_passes_on_truncated_stack() {
    let result = run(&["gradcheck", "--sample-per-tensor", "4"]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("gradient check passed"), "{stdout}");
}
