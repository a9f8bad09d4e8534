//! Command-line front end for the training and inference engine.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mobincep::data::{synth_generate, write_datasets};
use mobincep::gradcheck::{check_model_gradients, GradCheckConfig};
use mobincep::harness::{
    crossval, evaluate_checkpoint, kfold_indices_for, predict, resolve_dataset, train,
    write_report, RunConfig,
};
use mobincep::{model, Error};

#[derive(Parser)]
#[command(
    name = "mobincep",
    about = "Compact multi-domain microscopy image classifier: train from scratch, cross-validate, evaluate, predict",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the run-driving subcommands. `--set key=value` reaches
/// every config key; the named flags cover the common ones.
#[derive(Args, Clone)]
struct CommonOpts {
    /// Config file (key = value lines); defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for splits, initialization, shuffling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the centroid-separation loss term.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Weight of the cluster-scatter loss term.
    #[arg(long)]
    gamma2: Option<f64>,
    /// Train/val/test percentages, e.g. 60/20/20.
    #[arg(long)]
    split: Option<String>,
    /// Repeats per fold in cross-validation.
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset root (single-domain `root/<class>/` or multi-domain
    /// `root/<domain>/<class>/`); without it the synthetic generator runs.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fixed-threading deterministic mode. The engine always computes
    /// single-threaded and seeded, so this is the only behavior; the flag
    /// is accepted for interface stability.
    #[arg(long)]
    deterministic: bool,
    /// Additional `key=value` config overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonOpts {
    fn build_config(&self) -> mobincep::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let mut overrides: BTreeMap<String, String> = BTreeMap::new();
        if let Some(seed) = self.seed {
            overrides.insert("seed".into(), seed.to_string());
        }
        if let Some(g) = self.gamma1 {
            overrides.insert("gamma1".into(), g.to_string());
        }
        if let Some(g) = self.gamma2 {
            overrides.insert("gamma2".into(), g.to_string());
        }
        if let Some(s) = &self.split {
            overrides.insert("split".into(), s.clone());
        }
        if let Some(r) = self.repeats {
            overrides.insert("repeats".into(), r.to_string());
        }
        if let Some(out) = &self.out {
            overrides.insert("out_dir".into(), out.display().to_string());
        }
        if let Some(data) = &self.data {
            overrides.insert("data_root".into(), data.display().to_string());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set wants key=value, got `{kv}`")))?;
            overrides.insert(k.trim().to_string(), v.trim().to_string());
        }
        config.apply(&overrides)?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on fold 0 of the configured split.
    Train(CommonOpts),
    /// Full cross-validation: folds x repeats runs plus aggregation.
    Crossval(CommonOpts),
    /// Evaluate a checkpoint over one split of a dataset.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint produced by `train`/`crossval`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which part to evaluate: train, val, test or all.
        #[arg(long, default_value = "test")]
        part: String,
        /// Fold whose split to reproduce.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Evaluate exactly the indices in this file (one per line,
        /// e.g. a `test.idx` from a run directory) instead of a named part.
        #[arg(long)]
        indices: Option<PathBuf>,
    },
    /// Classify image files with a checkpoint.
    Predict {
        /// Checkpoint produced by `train`/`crossval`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Model input side length (must match training).
        #[arg(long, default_value_t = 224)]
        input_size: usize,
        /// Image files.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Generate the synthetic multi-domain dataset to a directory tree.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Target directory (written as `<dir>/<domain>/<class>/*.png`).
        #[arg(long)]
        dir: PathBuf,
    },
    /// Finite-difference gradient verification on a width-reduced model.
    Gradcheck {
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Depthwise-separable layers to keep (the probe is only
        /// conclusive on a truncated stack; see README).
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Check every element (default) or at most N per tensor.
        #[arg(long)]
        sample_per_tensor: Option<usize>,
        /// Run the full-depth stack at h=1e-4 instead, reporting why that
        /// probe fails for any implementation.
        #[arg(long)]
        literal: bool,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

fn run() -> mobincep::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(common) => {
            let config = common.build_config()?;
            let record = train(&config)?;
            println!(
                "trained {} epochs (best val loss {:.6} at epoch {})",
                record.epochs_run, record.best_val_loss, record.best_epoch
            );
            println!(
                "test accuracy {:.4}, micro AUC {:.4}, macro AUC {:.4}",
                record.test_accuracy, record.test_micro_auc, record.test_macro_auc
            );
            println!("artifacts in {}", record.run_dir.display());
        }
        Command::Crossval(common) => {
            let config = common.build_config()?;
            let record = crossval(&config)?;
            print!("{}", record.summary_csv());
            println!(
                "accuracy {:.2} +- {:.2} (%), {} runs, summary in {}",
                100.0 * record.accuracy.mean,
                100.0 * record.accuracy.std,
                record.runs.len(),
                config.out_dir.join("summary.csv").display()
            );
        }
        Command::Evaluate {
            common,
            checkpoint,
            part,
            fold,
            indices,
        } => {
            let config = common.build_config()?;
            let ckpt = model::load(&checkpoint)?;
            let mix = resolve_dataset(&config)?;
            let chosen: Vec<usize> = match indices {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    text.lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(|l| {
                            l.trim().parse().map_err(|_| {
                                Error::Data(format!("bad index `{l}` in {}", path.display()))
                            })
                        })
                        .collect::<mobincep::Result<_>>()?
                }
                None => match part.as_str() {
                    "all" => (0..mix.len()).collect(),
                    named => {
                        let split = kfold_indices_for(&config, &mix, fold)?;
                        match named {
                            "train" => split.train,
                            "val" => split.val,
                            "test" => split.test,
                            other => {
                                return Err(Error::Config(format!(
                                    "unknown split part `{other}` (train|val|test|all)"
                                )))
                            }
                        }
                    }
                },
            };
            let report = evaluate_checkpoint(&ckpt, &mix, &chosen, &config)?;
            write_report(&report, &mix.class_names, &config.out_dir)?;
            print!("{}", report.to_csv(&mix.class_names));
            println!("reports written to {}", config.out_dir.display());
        }
        Command::Predict {
            checkpoint,
            input_size,
            images,
        } => {
            let ckpt = model::load(&checkpoint)?;
            let mut failures = 0;
            for prediction in predict(&ckpt, &images, input_size) {
                match prediction.outcome {
                    Ok((class, probs)) => {
                        let vector: Vec<String> = probs.iter().map(|p| format!("{p:.4}")).collect();
                        println!(
                            "{}\t{}\t[{}]",
                            prediction.path.display(),
                            class,
                            vector.join(", ")
                        );
                    }
                    Err(e) => {
                        eprintln!("error: {}: {e}", prediction.path.display());
                        failures += 1;
                    }
                }
            }
            if failures > 0 {
                return Err(Error::Data(format!("{failures} file(s) failed")));
            }
        }
        Command::Synth { common, dir } => {
            let config = common.build_config()?;
            let datasets = synth_generate(&config.synth_spec())?;
            write_datasets(&datasets, &dir)?;
            let total: usize = datasets.iter().map(|d| d.len()).sum();
            println!(
                "wrote {total} images across {} domains to {}",
                datasets.len(),
                dir.display()
            );
        }
        Command::Gradcheck {
            h,
            depth,
            sample_per_tensor,
            literal,
            seed,
        } => {
            let cfg = if literal {
                GradCheckConfig {
                    h: 1e-4,
                    sample_per_tensor: sample_per_tensor.or(Some(16)),
                    seed,
                    ..Default::default()
                }
            } else {
                GradCheckConfig {
                    h,
                    ds_layers: Some(depth),
                    sample_per_tensor,
                    seed,
                    ..Default::default()
                }
            };
            let report = check_model_gradients(&cfg)?;
            let mut worst: Vec<_> = report.params.iter().collect();
            worst.sort_by(|a, b| b.max_rel_err.partial_cmp(&a.max_rel_err).unwrap());
            for p in worst.iter().take(8) {
                println!(
                    "{:40} checked {:5} max rel err {:.3e}",
                    p.name, p.checked, p.max_rel_err
                );
            }
            println!(
                "checked {} elements, max rel err {:.3e} (tolerance {:.0e})",
                report.total_checked, report.max_rel_err, report.tolerance
            );
            if literal {
                println!(
                    "note: at full depth an h=1e-4 probe cannot resolve the loss slope for any \
                     implementation (the surface's slope varies by O(10) inside the probe window); \
                     the truncated-stack sweep is the conclusive check"
                );
            }
            if !report.passed() {
                return Err(Error::Contract(format!(
                    "gradient check failed: max rel err {:.3e}",
                    report.max_rel_err
                )));
            }
            println!("gradient check passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::DataList(items)) => {
            for item in items {
                eprintln!("error: {item}");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
