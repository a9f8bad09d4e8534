//! Inference-side harness pieces: evaluation over a split, prediction on
//! loose image files, and the metrics/ROC CSV artifacts.

use std::path::Path;

use super::config::RunConfig;
use super::train::make_batch;
use crate::data::{preprocess, MixDataset};
use crate::error::Error;
use crate::loss::softmax_rows;
use crate::metrics::MetricsReport;
use crate::model::{Checkpoint, MobincepNet};
use crate::tensor::{Tape, Tensor};
use crate::Result;

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference over the given samples: probabilities, predictions and the
/// full metrics report.
pub fn evaluate_on_indices(
    net: &MobincepNet<f32>,
    mix: &MixDataset,
    indices: &[usize],
    config: &RunConfig,
) -> Result<MetricsReport> {
    let k = net.num_classes();
    if k != mix.total_classes() {
        return Err(Error::config(format!(
            "checkpoint classifies {k} classes but the dataset has {}",
            mix.total_classes()
        )));
    }
    if indices.is_empty() {
        return Err(Error::contract("evaluation over an empty index list"));
    }
    let mut scores = Vec::with_capacity(indices.len() * k);
    let mut preds = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(16) {
        let (batch, labels) = make_batch(mix, chunk, config, None)?;
        let mut tape = Tape::new();
        let input = tape.constant(&batch);
        let out = net.forward_infer(&mut tape, input)?;
        let probs = softmax_rows(&tape.value(out.logits));
        for (row, &label) in probs.data().chunks_exact(k).zip(&labels) {
            preds.push(argmax_lowest(row));
            truth.push(label);
            scores.extend(row.iter().map(|&v| v as f64));
        }
    }
    MetricsReport::compute(&truth, &preds, &scores, k)
}

/// Load a checkpoint and evaluate it over one split of the dataset.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    mix: &MixDataset,
    indices: &[usize],
    config: &RunConfig,
) -> Result<MetricsReport> {
    evaluate_on_indices(&checkpoint.net, mix, indices, config)
}

/// Write `metrics.csv` plus one `roc_<class>.csv` per defined class.
pub fn write_report(report: &MetricsReport, class_names: &[String], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), report.to_csv(class_names))?;
    for (c, name) in class_names.iter().enumerate() {
        if let Some(csv) = report.roc_points_csv(c) {
            let safe: String = name
                .chars()
                .map(|ch| if ch.is_alphanumeric() { ch } else { '_' })
                .collect();
            std::fs::write(dir.join(format!("roc_{c:02}_{safe}.csv")), csv)?;
        }
    }
    Ok(())
}

/// Outcome of predicting one image file.
pub struct Prediction {
    pub path: std::path::PathBuf,
    /// Class name (from the checkpoint's embedded config) and the full
    /// probability vector, or the per-file error.
    pub outcome: Result<(String, Vec<f32>)>,
}

/// Preprocess + inference + softmax + argmax per file. Unreadable files
/// yield per-file errors; the rest are still processed.
pub fn predict(
    checkpoint: &Checkpoint,
    paths: &[std::path::PathBuf],
    input_size: usize,
) -> Vec<Prediction> {
    let k = checkpoint.net.num_classes();
    paths
        .iter()
        .map(|path| {
            let outcome = (|| -> Result<(String, Vec<f32>)> {
                let img = image::open(path)?;
                let rgb = img.to_rgb8();
                let data: Vec<f32> = rgb
                    .into_raw()
                    .into_iter()
                    .map(|v| v as f32 / 255.0)
                    .collect();
                let image = crate::data::ImageData::new(
                    img.height() as usize,
                    img.width() as usize,
                    3,
                    data,
                )?;
                let tensor: Tensor<f32> = preprocess(&image, input_size)?;
                let batch = tensor.reshape(&[1, 3, input_size, input_size])?;
                let mut tape = Tape::new();
                let input = tape.constant(&batch);
                let out = checkpoint.net.forward_infer(&mut tape, input)?;
                let probs = softmax_rows(&tape.value(out.logits));
                let row = probs.data();
                let class = argmax_lowest(row);
                let name = checkpoint
                    .class_names
                    .get(class)
                    .cloned()
                    .unwrap_or_else(|| format!("class_{class}"));
                debug_assert_eq!(row.len(), k);
                Ok((name, row.to_vec()))
            })();
            Prediction {
                path: path.clone(),
                outcome,
            }
        })
        .collect()
}
