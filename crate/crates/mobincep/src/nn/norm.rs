//! Batch normalization composed from tape primitives, so its backward pass
//! comes from the same autodiff path as everything else.

use crate::error::Error;
use crate::tensor::{ReduceOp, Scalar, Tape, Tensor, Var};
use crate::Result;

/// Per-channel batch statistics of one training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>, // [C]
    pub var: Tensor<T>,  // [C], biased (divide by n)
}

/// Batch normalization parameters. Training mode normalizes with batch
/// statistics over (N, H, W) per channel; inference mode uses the running
/// estimates, updated as `r <- (1-m)*r + m*batch_stat`.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Scalar> BatchNorm<T> {
    /// gamma = 1, beta = 0, running stats at the standard-normal fixpoint.
    /// Epsilon 1e-5 and momentum 0.1 are the conventional values.
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::ONE),
            momentum: T::from_f64(0.1),
            epsilon: T::from_f64(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Trainable parameters only (running stats are buffers).
    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    /// Normalize with batch statistics. Does not touch the running
    /// estimates; pass the returned stats to [`BatchNorm::apply_update`]
    /// when the pass belongs to an actual optimization step.
    pub fn forward_train(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        name: &str,
    ) -> Result<(Var, BatchStats<T>)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape(format!(
                "batch norm wants rank-4 input, got {shape:?}"
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batch norm over {} channels applied to {c}-channel input",
                self.channels()
            )));
        }
        if n * h * w < 2 {
            return Err(Error::contract(format!(
                "training-mode batch norm needs N*H*W >= 2 samples per channel, got {}",
                n * h * w
            )));
        }

        let mu = tape.reduce(ReduceOp::Mean, x, &[0, 2, 3], true)?; // [1,C,1,1]
        let centered = tape.sub(x, mu)?;
        let sq = tape.square(centered);
        let var = tape.reduce(ReduceOp::Mean, sq, &[0, 2, 3], true)?;
        let var_eps = tape.add_scalar(var, self.epsilon);
        let denom = tape.sqrt(var_eps);
        let xhat = tape.div(centered, denom)?;

        let gamma = super::register(
            tape,
            crate::tensor::Mode::Train,
            &format!("{name}.gamma"),
            &self.gamma,
        )?;
        let beta = super::register(
            tape,
            crate::tensor::Mode::Train,
            &format!("{name}.beta"),
            &self.beta,
        )?;
        let gamma4 = tape.reshape(gamma, &[1, c, 1, 1])?;
        let beta4 = tape.reshape(beta, &[1, c, 1, 1])?;
        let scaled = tape.mul(xhat, gamma4)?;
        let y = tape.add(scaled, beta4)?;

        let stats = BatchStats {
            mean: tape.value(mu).reshape(&[c])?,
            var: tape.value(var).reshape(&[c])?,
        };
        Ok((y, stats))
    }

    /// Normalize with externally fixed statistics while keeping gamma and
    /// beta trainable: the training-mode computation with the statistics
    /// path detached. Used by the gradient oracle to separate the
    /// statistics contribution from the rest of the backward pass.
    pub fn forward_with_stats(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        stats: &BatchStats<T>,
        name: &str,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch norm over {} channels applied to input {shape:?}",
                self.channels()
            )));
        }
        let c = shape[1];
        let mean = tape.constant(&stats.mean.reshape(&[1, c, 1, 1])?);
        let denom = Tensor::from_fn(&[1, c, 1, 1], |i| {
            (stats.var.data()[i] + self.epsilon).sqrt()
        });
        let denom = tape.constant(&denom);
        let centered = tape.sub(x, mean)?;
        let xhat = tape.div(centered, denom)?;
        let gamma = super::register(
            tape,
            crate::tensor::Mode::Train,
            &format!("{name}.gamma"),
            &self.gamma,
        )?;
        let beta = super::register(
            tape,
            crate::tensor::Mode::Train,
            &format!("{name}.beta"),
            &self.beta,
        )?;
        let gamma4 = tape.reshape(gamma, &[1, c, 1, 1])?;
        let beta4 = tape.reshape(beta, &[1, c, 1, 1])?;
        let scaled = tape.mul(xhat, gamma4)?;
        tape.add(scaled, beta4)
    }

    /// Normalize with the running estimates; nothing mutates.
    pub fn forward_infer(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch norm over {} channels applied to input {shape:?}",
                self.channels()
            )));
        }
        let c = shape[1];
        // y = gamma * (x - mean) / sqrt(var + eps) + beta, folded into
        // per-channel scale/shift constants
        let scale = Tensor::from_fn(&[1, c, 1, 1], |i| {
            self.gamma.data()[i] / (self.running_var.data()[i] + self.epsilon).sqrt()
        });
        let shift = Tensor::from_fn(&[1, c, 1, 1], |i| {
            self.beta.data()[i] - self.running_mean.data()[i] * scale.data()[i]
        });
        let scale = tape.constant(&scale);
        let shift = tape.constant(&shift);
        let scaled = tape.mul(x, scale)?;
        tape.add(scaled, shift)
    }

    /// Fold one batch's statistics into the running estimates.
    pub fn apply_update(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        let keep = T::ONE - m;
        for (r, &b) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(stats.mean.data())
        {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(stats.var.data()) {
            *r = keep * *r + m * b;
        }
    }
}
