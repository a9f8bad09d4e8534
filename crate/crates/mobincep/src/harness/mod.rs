//! Orchestration: run configuration, the training loop, cross-validation,
//! evaluation and prediction. Every run directory carries its resolved
//! config snapshot, seed, split index files, loss CSV, metrics CSVs and
//! best checkpoint — enough to replay the run bit-identically.

mod config;
mod crossval;
mod evaluate;
mod train;

pub use config::RunConfig;
pub use crossval::{crossval, mean_std, ExperimentRecord, MeanStd};
pub use evaluate::{
    argmax_lowest, evaluate_checkpoint, evaluate_on_indices, predict, write_report, Prediction,
};
pub use train::{
    kfold_indices_for, make_batch, model_config, resolve_dataset, train, train_single,
    validation_loss, verify_split_audit, RunRecord,
};
