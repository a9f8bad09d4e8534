//! The training loop: batching, augmentation, the integrated loss, AMSGrad
//! updates, per-iteration cluster refresh, early stopping, checkpointing
//! and the per-run artifact files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::data::{
    augment, kfold_split, load_dataset, load_multi_domain, mix_domains, preprocess, synth_generate,
    MixDataset, SplitIndices,
};
use crate::error::Error;
use crate::loss::{total_loss, ClusterState, LossBreakdown};
use crate::model::{self, MobincepConfig, MobincepNet};
use crate::optim::{Amsgrad, EarlyStopping, StopUpdate};
use crate::tensor::{Tape, Tensor};
use crate::Result;

/// Everything recorded about one training run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Mean loss breakdown per epoch: (ce, separation, scatter, total).
    pub train_loss: Vec<(f64, f64, f64, f64)>,
    pub val_loss: Vec<f64>,
    pub test_accuracy: f64,
    pub test_micro_auc: f64,
    pub test_macro_auc: f64,
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
}

/// Load the configured dataset: an on-disk directory tree when `data_root`
/// is set (multi-domain if its subdirectories contain further directories,
/// single-domain otherwise), else the synthetic generator.
pub fn resolve_dataset(config: &RunConfig) -> Result<MixDataset> {
    let domains = match &config.data_root {
        Some(root) => {
            if looks_multi_domain(root)? {
                load_multi_domain(root)?
            } else {
                vec![load_dataset(root)?]
            }
        }
        None => synth_generate(&config.synth_spec())?,
    };
    mix_domains(domains)
}

fn looks_multi_domain(root: &Path) -> Result<bool> {
    for entry in std::fs::read_dir(root)
        .map_err(|e| Error::Data(format!("cannot read `{}`: {e}", root.display())))?
    {
        let path = entry.map_err(|e| Error::Data(e.to_string()))?.path();
        if path.is_dir() {
            // a domain directory holds class directories; a class directory
            // holds image files
            let has_subdir = std::fs::read_dir(&path)
                .map(|mut it| it.any(|e| e.map(|e| e.path().is_dir()).unwrap_or(false)))
                .unwrap_or(false);
            return Ok(has_subdir);
        }
    }
    Err(Error::Data(format!(
        "`{}` contains no directories",
        root.display()
    )))
}

/// Assemble a `[B, 3, S, S]` batch (optionally augmented) plus its labels.
pub fn make_batch(
    mix: &MixDataset,
    indices: &[usize],
    config: &RunConfig,
    augmentation: Option<(u64, usize)>, // (run seed, epoch)
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let s = config.input_size;
    let mut data = Vec::with_capacity(indices.len() * 3 * s * s);
    let mut labels = Vec::with_capacity(indices.len());
    let aug_cfg = config.augment_config();
    for &idx in indices {
        let img = &mix.images[idx];
        let tensor: Tensor<f32> = match augmentation {
            Some((seed, epoch)) if config.augment => {
                // per-sample stream keyed by (epoch, dataset index): the
                // draw is independent of batch composition and worker order
                let mut rng = ChaCha8Rng::seed_from_u64(crate::data::mix_seed(
                    seed,
                    epoch as u64,
                    idx as u64,
                ));
                let warped = augment(img, &aug_cfg, &mut rng);
                preprocess(&warped.image, s)?
            }
            _ => preprocess(&img.image, s)?,
        };
        data.extend_from_slice(tensor.data());
        labels.push(img.class_id);
    }
    let batch = Tensor::from_vec(&[indices.len(), 3, s, s], data)?;
    Ok((batch, labels))
}

/// The architecture a run config implies for a dataset of `num_classes`.
pub fn model_config(config: &RunConfig, num_classes: usize) -> MobincepConfig {
    if config.width_divisor <= 1 {
        let mut cfg = MobincepConfig::full(num_classes);
        cfg.input_size = config.input_size;
        cfg
    } else {
        MobincepConfig::width_reduced(num_classes, config.width_divisor, config.input_size)
    }
}

/// Mean cross-entropy over a split in inference mode (the early-stopping
/// criterion; the regularizer terms depend on the training-time buffer and
/// have no validation analogue).
pub fn validation_loss(
    net: &MobincepNet<f32>,
    mix: &MixDataset,
    indices: &[usize],
    config: &RunConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(16.max(config.batch_size)) {
        let (batch, labels) = make_batch(mix, chunk, config, None)?;
        let mut tape = Tape::new();
        let input = tape.constant(&batch);
        let out = net.forward_infer(&mut tape, input)?;
        let ce = crate::loss::cross_entropy(&mut tape, out.logits, &labels)?;
        total += tape.value(ce).item() as f64 * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count.max(1) as f64)
}

/// One complete training run on the given fold. Writes into `run_dir`:
/// `config.txt` (resolved snapshot), `seed.txt`, the split index files,
/// `loss.csv` (per iteration), `best.mbcp` (best-validation checkpoint),
/// and after training `metrics.csv` + per-class `roc_*.csv` on the test
/// split.
pub fn train_single(
    config: &RunConfig,
    mix: &MixDataset,
    fold: usize,
    repeat: usize,
    run_seed: u64,
    run_dir: &Path,
) -> Result<RunRecord> {
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join("config.txt"), config.to_text())?;
    std::fs::write(run_dir.join("seed.txt"), format!("{run_seed}\n"))?;

    let k = mix.total_classes();
    let labels = mix.labels();
    let split = kfold_split(&labels, k, &config.split_spec().with_fold(fold))?;
    split.write_to(run_dir)?;

    let model_cfg = model_config(config, k);
    let latent_dim = model_cfg.latent_dim();
    let mut net = MobincepNet::<f32>::build(model_cfg, run_seed)?;
    let mut optimizer = Amsgrad::new(config.optimizer_config());
    let mut stopper = EarlyStopping::<f64>::new(config.patience.max(1));
    let mut cluster = ClusterState::new(config.cluster_config(k, latent_dim));
    let reg_opts = config.regularizer_options();

    let ckpt_path = run_dir.join("best.mbcp");
    let mut loss_csv = String::from("step,ce,separation,scatter,total\n");
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut step = 0u64;
    let mut epochs_run = 0;
    let mut abort: Option<Error> = None;

    'epochs: for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = split.train.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::data::mix_seed(run_seed, 0x0e90c4, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (batch, batch_labels) = make_batch(mix, chunk, config, Some((run_seed, epoch)))?;
            let mut tape = Tape::new();
            let input = tape.constant(&batch);
            let (out, stats) = net.forward_train(&mut tape, input)?;

            // refresh the cluster state with this batch's detached latents
            // before the loss reads its centroids
            let latents = tape.value(out.latent);
            cluster.push_batch(&latents, &batch_labels)?;
            cluster.refresh()?;

            let loss = total_loss(
                &mut tape,
                out.logits,
                &batch_labels,
                out.latent,
                &cluster,
                &reg_opts,
            )?;
            let breakdown: LossBreakdown<f32> = loss.values(&tape);
            if !breakdown.total.is_finite() {
                abort = Some(Error::Optim(format!(
                    "non-finite loss at step {step}; stopping with the last good checkpoint"
                )));
                break 'epochs;
            }
            loss_csv.push_str(&format!(
                "{step},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                breakdown.ce, breakdown.separation, breakdown.scatter, breakdown.total
            ));

            let grads = tape.backward(loss.total)?;
            drop(tape);
            if let Err(e) = optimizer.step(&grads, |f| net.visit_params_mut(f)) {
                abort = Some(e);
                break 'epochs;
            }
            net.apply_bn_updates(&stats);

            epoch_sums.0 += breakdown.ce as f64;
            epoch_sums.1 += breakdown.separation as f64;
            epoch_sums.2 += breakdown.scatter as f64;
            epoch_sums.3 += breakdown.total as f64;
            epoch_batches += 1;
            step += 1;
        }
        let inv = 1.0 / epoch_batches.max(1) as f64;
        train_loss.push((
            epoch_sums.0 * inv,
            epoch_sums.1 * inv,
            epoch_sums.2 * inv,
            epoch_sums.3 * inv,
        ));

        let val = validation_loss(&net, mix, &split.val, config)?;
        val_loss.push(val);
        match stopper.update(val, epoch + 1) {
            StopUpdate::Improved => {
                model::save(&net, &mix.class_names, &ckpt_path)?;
            }
            StopUpdate::NoImprovement => {}
            StopUpdate::Stop => break,
        }
    }

    std::fs::write(run_dir.join("loss.csv"), &loss_csv)?;
    if !ckpt_path.exists() {
        // no epoch improved (e.g. immediate NaN): keep the initial weights
        // so downstream tooling still has a checkpoint to inspect
        model::save(&net, &mix.class_names, &ckpt_path)?;
    }
    if let Some(e) = abort {
        return Err(e);
    }

    // final report: the best checkpoint against the held-out test split
    let best = model::load(&ckpt_path)?;
    let report = super::evaluate::evaluate_on_indices(&best.net, mix, &split.test, config)?;
    super::evaluate::write_report(&report, &mix.class_names, run_dir)?;

    Ok(RunRecord {
        fold,
        repeat,
        seed: run_seed,
        epochs_run,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss().unwrap_or(f64::INFINITY),
        train_loss,
        val_loss,
        test_accuracy: report.accuracy,
        test_micro_auc: report.micro_auc(),
        test_macro_auc: report.roc.macro_auc,
        run_dir: run_dir.to_path_buf(),
        checkpoint: ckpt_path,
    })
}

/// The `train` entry point: resolve the dataset, train fold 0 with the
/// configured seed, leave all artifacts in `out_dir`.
pub fn train(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let mix = resolve_dataset(config)?;
    train_single(config, &mix, 0, 0, config.seed, &config.out_dir.clone())
}

/// The split a run with this config would use on `mix` at the given fold.
pub fn kfold_indices_for(
    config: &RunConfig,
    mix: &MixDataset,
    fold: usize,
) -> Result<SplitIndices> {
    kfold_split(
        &mix.labels(),
        mix.total_classes(),
        &config.split_spec().with_fold(fold),
    )
}

/// Audit helper for the no-leakage invariant: the three split files in a
/// run directory must partition `0..n` exactly.
pub fn verify_split_audit(run_dir: &Path, n: usize) -> Result<()> {
    let split = SplitIndices::read_from(run_dir)?;
    let mut seen = vec![false; n];
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        if i >= n {
            return Err(Error::Data(format!(
                "split index {i} out of range ({n} samples)"
            )));
        }
        if seen[i] {
            return Err(Error::Data(format!(
                "split index {i} appears in two subsets"
            )));
        }
        seen[i] = true;
    }
    if let Some(missing) = seen.iter().position(|&v| !v) {
        return Err(Error::Data(format!(
            "sample {missing} missing from the split"
        )));
    }
    Ok(())
}
