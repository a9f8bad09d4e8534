//! Cross-validation protocol: folds x repeats, fresh seed and model per
//! run, mean +- standard deviation aggregation.

use std::path::Path;

use super::config::RunConfig;
use super::train::{resolve_dataset, train_single, RunRecord};
use crate::Result;

/// Sample mean and (n-1)-normalized standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: 0.0,
            std: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// All runs of one cross-validation experiment plus the aggregates.
#[derive(Clone, Debug)]
pub struct ExperimentRecord {
    pub runs: Vec<RunRecord>,
    pub accuracy: MeanStd,
    pub micro_auc: MeanStd,
    pub macro_auc: MeanStd,
}

impl ExperimentRecord {
    pub fn aggregate(runs: Vec<RunRecord>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let micro: Vec<f64> = runs.iter().map(|r| r.test_micro_auc).collect();
        let macro_: Vec<f64> = runs.iter().map(|r| r.test_macro_auc).collect();
        ExperimentRecord {
            accuracy: mean_std(&acc),
            micro_auc: mean_std(&micro),
            macro_auc: mean_std(&macro_),
            runs,
        }
    }

    /// Per-run rows plus mean/std footer, the reporting convention of the
    /// accuracy tables.
    pub fn summary_csv(&self) -> String {
        let mut s =
            String::from("fold,repeat,seed,epochs,best_val_loss,accuracy,micro_auc,macro_auc\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.fold,
                r.repeat,
                r.seed,
                r.epochs_run,
                r.best_val_loss,
                r.test_accuracy,
                r.test_micro_auc,
                r.test_macro_auc
            ));
        }
        s.push_str(&format!(
            "mean,,,,,{:.6},{:.6},{:.6}\n",
            self.accuracy.mean, self.micro_auc.mean, self.macro_auc.mean
        ));
        s.push_str(&format!(
            "std,,,,,{:.6},{:.6},{:.6}\n",
            self.accuracy.std, self.micro_auc.std, self.macro_auc.std
        ));
        s
    }

    pub fn write_summary(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        Ok(())
    }
}

/// Run `folds x repeats` independent trainings. Splits depend on
/// `(seed, fold)` only (repeats share the fold's split and differ in model
/// initialization, shuffling and augmentation); every run gets a derived
/// seed and its own run directory under `out_dir`.
pub fn crossval(config: &RunConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let mix = resolve_dataset(config)?;
    let mut runs = Vec::with_capacity(config.folds * config.repeats);
    for fold in 0..config.folds {
        for repeat in 0..config.repeats {
            let run_seed =
                crate::data::mix_seed(config.seed, fold as u64, 0x9e3779b9 + repeat as u64);
            let run_dir = config.out_dir.join(format!("fold{fold}_rep{repeat}"));
            let mut record = train_single(config, &mix, fold, repeat, run_seed, &run_dir)?;
            record.repeat = repeat;
            runs.push(record);
        }
    }
    let record = ExperimentRecord::aggregate(runs);
    record.write_summary(&config.out_dir)?;
    Ok(record)
}
