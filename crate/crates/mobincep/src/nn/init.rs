//! Kaiming-uniform weight initialization.

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// I.i.d. uniform on `[-b, b]` with `b = sqrt(6 / fan_in)` (the ReLU-gain
/// uniform variant). `fan_in` is `C_in * k_h * k_w` for convolutions and the
/// input extent for linear layers.
///
/// Draws happen in `f64` and are cast to `T`, so the same seed produces the
/// same network at both precisions.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    assert!(fan_in >= 1, "kaiming init needs fan_in >= 1");
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let u: f64 = rng.random();
        T::from_f64(bound * (2.0 * u - 1.0))
    })
}
