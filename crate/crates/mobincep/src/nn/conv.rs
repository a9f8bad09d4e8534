//! Standard and depthwise-separable convolution layers.

use rand::Rng;

use super::{kaiming_uniform, register, BatchNorm, BatchStats};
use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};
use crate::Result;

/// Standard multi-channel convolution parameters. Kernels are odd (1, 3
/// or 5 in this network); forward is cross-correlation with zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>, // [C_out, C_in, k_h, k_w]
    pub bias: Option<Tensor<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Conv2d {
            weight: kaiming_uniform(&[c_out, c_in, kernel, kernel], fan_in, rng),
            bias: with_bias.then(|| Tensor::zeros(&[c_out])),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode, name: &str) -> Result<Var> {
        let w = register(tape, mode, &format!("{name}.weight"), &self.weight)?;
        let b = match &self.bias {
            Some(b) => Some(register(tape, mode, &format!("{name}.bias"), b)?),
            None => None,
        };
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

/// Depthwise-separable convolution: one single-channel spatial kernel per
/// input channel, then a 1×1 cross-channel mix. Parameter count is
/// `k²·C_in + C_in·C_out`, strictly below the standard `k²·C_in·C_out`.
#[derive(Clone, Debug)]
pub struct DepthwiseSeparable<T> {
    pub depthwise: Tensor<T>, // [C_in, 1, k, k]
    pub pointwise: Tensor<T>, // [C_out, C_in, 1, 1]
    pub stride: (usize, usize),
    pub padding: (usize, usize), // applied in the depthwise step
}

impl<T: Scalar> DepthwiseSeparable<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        DepthwiseSeparable {
            depthwise: kaiming_uniform(&[c_in, 1, kernel, kernel], kernel * kernel, rng),
            pointwise: kaiming_uniform(&[c_out, c_in, 1, 1], c_in, rng),
            stride: (stride, stride),
            padding: (super::same_padding(kernel), super::same_padding(kernel)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.depthwise.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len()
    }

    /// Depthwise then pointwise as one composite op.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode, name: &str) -> Result<Var> {
        let mid = self.forward_depthwise(tape, x, mode, name)?;
        self.forward_pointwise(tape, mid, mode, name)
    }

    /// The spatial (per-channel) half alone.
    pub fn forward_depthwise(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        name: &str,
    ) -> Result<Var> {
        let dw = register(tape, mode, &format!("{name}.depthwise"), &self.depthwise)?;
        tape.depthwise_conv2d(x, dw, self.stride, self.padding)
    }

    /// The 1×1 cross-channel half alone.
    pub fn forward_pointwise(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        name: &str,
    ) -> Result<Var> {
        let pw = register(tape, mode, &format!("{name}.pointwise"), &self.pointwise)?;
        tape.conv2d(x, pw, None, (1, 1), (0, 0))
    }
}

/// Convolution followed by batch normalization and ReLU — the repeating
/// motif of the whole network. The convolution carries no bias (the batch
/// norm shift subsumes it).
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(c_in, c_out, kernel, stride, padding, false, rng),
            bn: BatchNorm::new(c_out),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    pub fn forward_train(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        name: &str,
    ) -> Result<(Var, BatchStats<T>)> {
        let h = self
            .conv
            .forward(tape, x, Mode::Train, &format!("{name}.conv"))?;
        let (h, stats) = self.bn.forward_train(tape, h, &format!("{name}.bn"))?;
        Ok((tape.relu(h), stats))
    }

    pub fn forward_infer(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let h = self
            .conv
            .forward(tape, x, Mode::Infer, &format!("{name}.conv"))?;
        let h = self.bn.forward_infer(tape, h)?;
        Ok(tape.relu(h))
    }

    /// Training-mode pass with the batch-norm statistics pinned (see
    /// [`BatchNorm::forward_with_stats`]).
    pub fn forward_frozen(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        stats: &BatchStats<T>,
        name: &str,
    ) -> Result<Var> {
        let h = self
            .conv
            .forward(tape, x, Mode::Train, &format!("{name}.conv"))?;
        let h = self
            .bn
            .forward_with_stats(tape, h, stats, &format!("{name}.bn"))?;
        Ok(tape.relu(h))
    }
}
