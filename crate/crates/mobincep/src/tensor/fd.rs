//! Central finite-difference gradient oracle.
//!
//! Lives in the library (not just tests) because the `gradcheck` CLI
//! subcommand drives it over a full model. The oracle never touches the
//! tape: it only re-evaluates a black-box scalar function, which keeps the
//! two gradient paths independent.

use crate::tensor::{Scalar, Tensor};

/// Default step for 64-bit checks.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` per element.
///
/// `f` must be deterministic; NaN in `f` propagates into the estimate.
pub fn finite_diff_gradient<T, F>(mut f: F, x: &Tensor<T>, h: T) -> Tensor<T>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> T,
{
    let two_h = h + h;
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / two_h);
    }
    Tensor::from_vec(x.shape(), grad).expect("gradient shaped like x")
}

/// Relative error with a denominator floor: `|a−b| / max(|a|, |b|, floor)`.
/// The floor keeps near-zero gradients from blowing the ratio up on
/// finite-difference noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
