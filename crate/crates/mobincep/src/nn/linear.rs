//! Fully-connected output layer.

use rand::Rng;

use super::{kaiming_uniform, register};
use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};
use crate::Result;

/// `y = x · Wᵀ + b` with `W: [out, in]`. The classification head keeps its
/// bias (no batch norm follows it); the bias starts at zero.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Tensor<T>, // [out, in]
    pub bias: Tensor<T>,   // [out]
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: kaiming_uniform(&[out_dim, in_dim], in_dim, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode, name: &str) -> Result<Var> {
        let w = register(tape, mode, &format!("{name}.weight"), &self.weight)?;
        let b = register(tape, mode, &format!("{name}.bias"), &self.bias)?;
        let h = tape.matmul_nt(x, w)?;
        tape.add(h, b)
    }
}
