//! Neural-network building blocks: convolution variants, batch
//! normalization, pooling (via [`Tape`] ops), linear layer, the inception
//! block, and Kaiming-uniform initialization.

mod conv;
mod inception;
mod init;
mod linear;
mod norm;

pub use conv::{Conv2d, ConvBnRelu, DepthwiseSeparable};
pub use inception::{Inception, InceptionSpec};
pub use init::kaiming_uniform;
pub use linear::Linear;
pub use norm::{BatchNorm, BatchStats};

use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};
use crate::Result;

/// Same-padding for an odd kernel extent.
pub fn same_padding(kernel: usize) -> usize {
    debug_assert!(
        kernel % 2 == 1,
        "same padding needs an odd kernel, got {kernel}"
    );
    (kernel - 1) / 2
}

/// Register a tensor as a named trainable parameter in training mode or as
/// a plain constant in inference mode.
pub(crate) fn register<T: Scalar>(
    tape: &mut Tape<T>,
    mode: Mode,
    name: &str,
    t: &Tensor<T>,
) -> Result<Var> {
    match mode {
        Mode::Train => tape.param(name, t),
        Mode::Infer => Ok(tape.constant(t)),
    }
}
