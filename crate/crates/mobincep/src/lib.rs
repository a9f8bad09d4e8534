//! Training and inference engine for a compact multi-domain microscopy
//! image classifier.
//!
//! The network combines an inception front-end with a stack of
//! depthwise-separable convolution layers and is trained from scratch with a
//! cluster-regularized loss: cross-entropy plus a centroid-separation term
//! and a cluster-scatter term, with cluster centroids refreshed every
//! iteration by K-means over a ring buffer of latent vectors.
//!
//! Everything runs on CPU over a small reverse-mode autodiff tape
//! ([`tensor::Tape`]). `f32` is the training precision; every differentiable
//! operation is also instantiable at `f64` for finite-difference gradient
//! checks ([`tensor::finite_diff_gradient`], [`gradcheck`]).
//!
//! # Example
//!
//! ```
//! use mobincep::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(&Tensor::from_slice(&[3], &[-1.0f64, 0.5, 2.0]).unwrap(), true);
//! let h = tape.relu(x);
//! let loss = tape.mean_all(h).unwrap();
//! tape.backward(loss).unwrap();
//! // d mean(relu(x)) / dx = [0, 1/3, 1/3]
//! let grad = tape.grad_of(x).unwrap();
//! assert_eq!(grad.data(), &[0.0, 1.0 / 3.0, 1.0 / 3.0]);
//! ```
//!
//! Module map:
//! - [`tensor`] — dense n-d arrays, the tape, finite-difference oracle
//! - [`nn`] — conv / depthwise-separable / batch-norm / pooling / linear /
//!   inception blocks and Kaiming-uniform init
//! - [`model`] — the assembled network, parameter budget, checkpoints
//! - [`loss`] — cross-entropy, K-means, the cluster regularizer
//! - [`optim`] — AMSGrad and early stopping
//! - [`data`] — dataset loading, preprocessing, augmentation, domain
//!   mixing, stratified splits, synthetic multi-domain generator
//! - [`metrics`] — confusion matrix, precision/sensitivity/F1, ROC/AUC
//! - [`harness`] — run configuration, training loop, cross-validation,
//!   evaluation, prediction
//! - [`gradcheck`] — whole-model finite-difference sweep

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub(crate) mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
