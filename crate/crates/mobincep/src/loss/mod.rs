//! The integrated training loss: cross-entropy plus centroid-separation and
//! cluster-scatter regularizers over the latent space.

mod cluster;
mod kmeans;

pub use cluster::{
    regularizer_terms, regularizer_terms_with_assignments, ClusterConfig, ClusterState,
    LossWeights, RegTerms, RegularizerOptions,
};
pub use kmeans::{kmeans, KmeansResult};

use crate::error::Error;
use crate::kernels;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::Result;

/// Mean negative log-softmax of the true class, stabilized by row-max
/// subtraction. Differentiable w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape(format!(
            "cross entropy wants [N,K] logits, got {shape:?}"
        )));
    }
    let (n, k) = (shape[0], shape[1]);
    if n == 0 || labels.len() != n {
        return Err(Error::contract(format!(
            "cross entropy over {n} rows got {} labels",
            labels.len()
        )));
    }
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::contract(format!(
                "label {label} at row {i} out of range for {k} classes"
            )));
        }
    }

    // row max as a constant: the stabilization must not alter gradients
    let logit_vals = tape.value(logits);
    let row_max = kernels::reduce_max(logit_vals.data(), &shape, &[1]);
    let row_max = tape.constant(&Tensor::from_vec(&[n, 1], row_max)?);

    let z = tape.sub(logits, row_max)?;
    let e = tape.exp(z);
    let sum_e = tape.sum(e, &[1], true)?; // [N,1]
    let lse = tape.log(sum_e);
    let one_hot = Tensor::from_fn(&[n, k], |idx| {
        if idx % k == labels[idx / k] {
            T::ONE
        } else {
            T::ZERO
        }
    });
    let oh = tape.constant(&one_hot);
    let picked_terms = tape.mul(z, oh)?;
    let picked = tape.sum(picked_terms, &[1], true)?; // [N,1]
    let nll = tape.sub(lse, picked)?;
    tape.mean_all(nll)
}

/// Row-wise softmax of a plain tensor (inference-side helper; no tape).
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    assert_eq!(logits.rank(), 2, "softmax_rows wants [N,K]");
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().fold(row[0], |m, &v| m.maximum(v));
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let mut sum = T::ZERO;
        for &v in &exps {
            sum += v;
        }
        out.extend(exps.into_iter().map(|v| v / sum));
    }
    Tensor::from_vec(logits.shape(), out).expect("softmax preserves shape")
}

/// The three terms of the integrated cost plus their sum, as tape
/// variables. Terms with zero weight (and both terms during warm-up) are
/// zero constants, and the total is then the cross-entropy node itself.
pub struct LossVars {
    pub ce: Var,
    pub separation: Var,
    pub scatter: Var,
    pub total: Var,
    pub warm_up: bool,
}

/// Scalar snapshot of [`LossVars`] for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown<T> {
    pub ce: T,
    pub separation: T,
    pub scatter: T,
    pub total: T,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossBreakdown<T> {
        LossBreakdown {
            ce: tape.value(self.ce).item(),
            separation: tape.value(self.separation).item(),
            scatter: tape.value(self.scatter).item(),
            total: tape.value(self.total).item(),
        }
    }
}

/// `L = L_CE + γ₁/(Σ_k d²(μ_k, μ) + ε) + γ₂ Σ_k s_k²`.
///
/// Backward from `total` reaches both the logits and the latent batch.
/// With `γ₁ = γ₂ = 0` the total *is* the cross-entropy node (bitwise).
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    latent: Var,
    state: &ClusterState<T>,
    opts: &RegularizerOptions<T>,
) -> Result<LossVars> {
    let ce = cross_entropy(tape, logits, labels)?;
    let gamma1_on = opts.weights.gamma1 != T::ZERO;
    let gamma2_on = opts.weights.gamma2 != T::ZERO;

    if !gamma1_on && !gamma2_on {
        let zero1 = tape.constant(&Tensor::scalar(T::ZERO));
        let zero2 = tape.constant(&Tensor::scalar(T::ZERO));
        return Ok(LossVars {
            ce,
            separation: zero1,
            scatter: zero2,
            total: ce,
            warm_up: false,
        });
    }

    let terms = regularizer_terms(tape, latent, state, opts)?;
    let mut total = ce;
    if !terms.warm_up {
        if gamma1_on {
            total = tape.add(total, terms.separation)?;
        }
        if gamma2_on {
            total = tape.add(total, terms.scatter)?;
        }
    }
    Ok(LossVars {
        ce,
        separation: terms.separation,
        scatter: terms.scatter,
        total,
        warm_up: terms.warm_up,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_gradient;

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut tape = Tape::new();
        let logits = tape.constant(&Tensor::<f64>::zeros(&[3, 15]));
        let ce = cross_entropy(&mut tape, logits, &[0, 7, 14]).unwrap();
        assert!((tape.value(ce).item() - (15.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_class_example() {
        let mut tape = Tape::new();
        let logits = tape.constant(&Tensor::from_slice(&[2, 2], &[1.0f64, 0.0, 0.0, 1.0]).unwrap());
        let ce = cross_entropy(&mut tape, logits, &[0, 1]).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((tape.value(ce).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn huge_margin_saturates_without_overflow() {
        let mut tape = Tape::new();
        let logits = tape.constant(&Tensor::from_slice(&[1, 2], &[50.0f64, 0.0]).unwrap());
        let ce = cross_entropy(&mut tape, logits, &[0]).unwrap();
        let v = tape.value(ce).item();
        assert!(v.is_finite());
        assert!(v < 1e-20, "loss {v}");
    }

    #[test]
    fn out_of_range_label_is_contract_error() {
        let mut tape = Tape::new();
        let logits = tape.constant(&Tensor::<f64>::zeros(&[1, 3]));
        assert!(matches!(
            cross_entropy(&mut tape, logits, &[3]),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let logits = Tensor::from_slice(&[2, 3], &[0.2f64, -0.4, 0.9, 1.5, 0.0, -2.0]).unwrap();
        let labels = [2usize, 0];

        let mut tape = Tape::new();
        let lv = tape.leaf(&logits, true);
        let ce = cross_entropy(&mut tape, lv, &labels).unwrap();
        tape.backward(ce).unwrap();
        let analytic = tape.grad_of(lv).unwrap();

        let numeric = finite_diff_gradient(
            |probe| {
                let mut t = Tape::new();
                let lv = t.constant(probe);
                let ce = cross_entropy(&mut t, lv, &labels).unwrap();
                t.value(ce).item()
            },
            &logits,
            1e-5,
        );
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            assert!(
                crate::tensor::relative_error(a, n, 1e-8) < 1e-6,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn softmax_rows_normalizes() {
        let logits = Tensor::from_slice(&[2, 3], &[1.0f32, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        let p = softmax_rows(&logits);
        for row in p.data().chunks_exact(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_weights_reduce_total_to_ce_bitwise() {
        let state = ClusterState::<f64>::new(ClusterConfig::new(2, 2));
        let mut tape = Tape::new();
        let logits = tape.leaf(
            &Tensor::from_slice(&[2, 2], &[0.3, -0.7, 0.1, 0.2]).unwrap(),
            true,
        );
        let latent = tape.leaf(
            &Tensor::from_slice(&[2, 2], &[0.5, 0.5, -0.5, 0.5]).unwrap(),
            true,
        );
        let opts = RegularizerOptions {
            weights: LossWeights {
                gamma1: 0.0,
                gamma2: 0.0,
            },
            ..Default::default()
        };
        let loss = total_loss(&mut tape, logits, &[0, 1], latent, &state, &opts).unwrap();
        let b = loss.values(&tape);
        assert_eq!(b.total.to_bits(), b.ce.to_bits());
        assert_eq!(b.separation, 0.0);
        assert_eq!(b.scatter, 0.0);
        // the total literally is the ce node
        assert!(tape.value(loss.total).bitwise_eq(&tape.value(loss.ce)));
    }

    #[test]
    fn total_reaches_logits_and_latent() {
        // warm state: gradients must flow to both heads of the loss
        let centroids = Tensor::from_slice(&[2, 2], &[1.0, 0.0, -1.0, 0.0]).unwrap();
        let state = ClusterState::from_centroids(
            ClusterConfig::new(2, 2),
            centroids,
            Tensor::from_slice(&[2], &[0.0, 0.0]).unwrap(),
        );
        let mut tape = Tape::new();
        let logits = tape.leaf(
            &Tensor::from_slice(&[2, 2], &[0.3, -0.7, 0.1, 0.2]).unwrap(),
            true,
        );
        let latent = tape.leaf(
            &Tensor::from_slice(&[2, 2], &[0.9, 0.2, -1.2, 0.1]).unwrap(),
            true,
        );
        let loss = total_loss(
            &mut tape,
            logits,
            &[0, 1],
            latent,
            &state,
            &RegularizerOptions::default(),
        )
        .unwrap();
        assert!(!loss.warm_up);
        let b = loss.values(&tape);
        assert!((b.total - (b.ce + b.separation + b.scatter)).abs() < 1e-15);
        tape.backward(loss.total).unwrap();
        assert!(tape.grad_of(logits).is_some());
        assert!(tape.grad_of(latent).is_some());
    }

    #[test]
    fn total_latent_gradient_matches_finite_differences() {
        let centroids = Tensor::from_slice(&[2, 2], &[1.0, 0.5, -1.0, -0.5]).unwrap();
        let mk_state = || {
            ClusterState::from_centroids(
                ClusterConfig::new(2, 2),
                centroids.clone(),
                Tensor::from_slice(&[2], &[0.0, 0.0]).unwrap(),
            )
        };
        let logits = Tensor::from_slice(&[3, 2], &[0.4, -0.2, 1.1, 0.3, -0.6, 0.9]).unwrap();
        let latent = Tensor::from_slice(&[3, 2], &[0.8, 0.6, -1.3, -0.2, 0.2, -0.9]).unwrap();
        let labels = [0usize, 1, 0];
        let opts = RegularizerOptions::default();

        let state = mk_state();
        let mut tape = Tape::new();
        let lg = tape.constant(&logits);
        let lt = tape.leaf(&latent, true);
        let loss = total_loss(&mut tape, lg, &labels, lt, &state, &opts).unwrap();
        tape.backward(loss.total).unwrap();
        let analytic = tape.grad_of(lt).unwrap();

        let numeric = finite_diff_gradient(
            |probe| {
                let state = mk_state();
                let mut t = Tape::new();
                let lg = t.constant(&logits);
                let lt = t.leaf(probe, true);
                let loss = total_loss(&mut t, lg, &labels, lt, &state, &opts).unwrap();
                t.value(loss.total).item()
            },
            &latent,
            1e-4,
        );
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            assert!(
                crate::tensor::relative_error(a, n, 1e-7) < 1e-4,
                "analytic {a} vs numeric {n}"
            );
        }
    }
}
