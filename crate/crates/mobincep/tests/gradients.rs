//! Finite-difference checks for every differentiable tape operation and
//! layer, over several randomized shapes each. The oracle re-evaluates each
//! op as a black-box scalar function and never touches the backward path it
//! verifies.

use mobincep::nn::{BatchNorm, Conv2d, DepthwiseSeparable, Linear};
use mobincep::tensor::{finite_diff_gradient, relative_error, Mode, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = mobincep::tensor::DEFAULT_FD_STEP; // 1e-4
const TOL: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-4;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.random::<f64>())
}

/// Check d(scalar build(x))/dx against central differences.
fn check_input_grad(
    name: &str,
    x: &Tensor<f64>,
    tol: f64,
    build: impl Fn(&mut Tape<f64>, Var) -> Var,
) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x, true);
    let loss = build(&mut tape, xv);
    tape.backward(loss).expect("backward");
    let analytic = tape.grad_of(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let numeric = finite_diff_gradient(
        |probe| {
            let mut t = Tape::new();
            let xv = t.constant(probe);
            let loss = build(&mut t, xv);
            t.value(loss).item()
        },
        x,
        FD_STEP,
    );
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let err = relative_error(a, n, 1e-7);
        assert!(
            err < tol,
            "{name}: element {i} analytic {a} vs numeric {n} (rel err {err:.3e}, shape {:?})",
            x.shape()
        );
    }
}

/// Weighted sum with irregular weights so gradients aren't accidentally
/// uniform.
fn spiky_loss(tape: &mut Tape<f64>, v: Var) -> Var {
    let shape = tape.shape(v).to_vec();
    let weights = Tensor::from_fn(&shape, |i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4);
    let w = tape.constant(&weights);
    let prod = tape.mul(v, w).expect("same shape");
    tape.sum_all(prod).expect("sum")
}

#[test]
fn elementwise_unary_ops_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes: [&[usize]; 5] = [&[7], &[3, 4], &[2, 3, 5], &[1, 6], &[2, 2, 2, 2]];
    for shape in shapes {
        // positive-domain ops draw away from 0 to dodge the kink/singularity
        let x_pos = rand_tensor(shape, &mut rng, 0.4, 2.0);
        let x_any = rand_tensor(shape, &mut rng, -1.5, 1.5);

        check_input_grad("relu", &x_pos, TOL, |t, v| {
            let r = t.relu(v);
            spiky_loss(t, r)
        });
        check_input_grad("exp", &x_any, TOL, |t, v| {
            let r = t.exp(v);
            spiky_loss(t, r)
        });
        check_input_grad("log", &x_pos, TOL, |t, v| {
            let r = t.log(v);
            spiky_loss(t, r)
        });
        check_input_grad("square", &x_any, TOL, |t, v| {
            let r = t.square(v);
            spiky_loss(t, r)
        });
        check_input_grad("sqrt", &x_pos, TOL, |t, v| {
            let r = t.sqrt(v);
            spiky_loss(t, r)
        });
        check_input_grad("recip", &x_pos, TOL, |t, v| {
            let r = t.recip(v);
            spiky_loss(t, r)
        });
        check_input_grad("max_scalar", &x_pos, TOL, |t, v| {
            let r = t.max_scalar(v, 0.9);
            spiky_loss(t, r)
        });
        check_input_grad("scale_shift", &x_any, TOL, |t, v| {
            let r = t.mul_scalar(v, -1.7);
            let r = t.add_scalar(r, 0.3);
            spiky_loss(t, r)
        });
    }
}

#[test]
fn elementwise_binary_ops_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // (a shape, b shape) pairs exercising each broadcast layout
    let cases: [(&[usize], &[usize]); 6] = [
        (&[3, 4], &[3, 4]),
        (&[3, 4], &[4]),                // suffix tile
        (&[3, 4], &[3, 1]),             // run repeat
        (&[2, 3, 4, 4], &[1, 3, 1, 1]), // channel pattern
        (&[2, 5], &[1]),                // scalar
        (&[4, 1, 3], &[1, 2, 1]),       // general strided
    ];
    for (sa, sb) in cases {
        for op in 0..4 {
            let a = rand_tensor(sa, &mut rng, 0.5, 2.0);
            let b = rand_tensor(sb, &mut rng, 0.5, 2.0);
            let name = ["add", "sub", "mul", "div"][op];

            // gradient w.r.t. a with b constant
            let b2 = b.clone();
            check_input_grad(name, &a, TOL, move |t, av| {
                let bv = t.constant(&b2);
                let r = match op {
                    0 => t.add(av, bv),
                    1 => t.sub(av, bv),
                    2 => t.mul(av, bv),
                    _ => t.div(av, bv),
                }
                .expect("broadcastable");
                spiky_loss(t, r)
            });
            // gradient w.r.t. b with a constant
            let a2 = a.clone();
            check_input_grad(name, &b, TOL, move |t, bv| {
                let av = t.constant(&a2);
                let r = match op {
                    0 => t.add(av, bv),
                    1 => t.sub(av, bv),
                    2 => t.mul(av, bv),
                    _ => t.div(av, bv),
                }
                .expect("broadcastable");
                spiky_loss(t, r)
            });
        }
    }
}

#[test]
fn matmul_variants_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [(1, 2, 3), (4, 4, 4), (2, 5, 3), (3, 1, 4), (5, 2, 2)];
    for (m, k, n) in dims {
        let a = rand_tensor(&[m, k], &mut rng, -1.0, 1.0);
        let b = rand_tensor(&[k, n], &mut rng, -1.0, 1.0);
        let bt = rand_tensor(&[n, k], &mut rng, -1.0, 1.0);

        let b2 = b.clone();
        check_input_grad("matmul_lhs", &a, TOL, move |t, av| {
            let bv = t.constant(&b2);
            let r = t.matmul(av, bv).unwrap();
            spiky_loss(t, r)
        });
        let a2 = a.clone();
        check_input_grad("matmul_rhs", &b, TOL, move |t, bv| {
            let av = t.constant(&a2);
            let r = t.matmul(av, bv).unwrap();
            spiky_loss(t, r)
        });
        let bt2 = bt.clone();
        check_input_grad("matmul_nt_lhs", &a, TOL, move |t, av| {
            let bv = t.constant(&bt2);
            let r = t.matmul_nt(av, bv).unwrap();
            spiky_loss(t, r)
        });
        let a3 = a.clone();
        check_input_grad("matmul_nt_rhs", &bt, TOL, move |t, bv| {
            let av = t.constant(&a3);
            let r = t.matmul_nt(av, bv).unwrap();
            spiky_loss(t, r)
        });
    }
}

#[test]
fn reductions_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases: [(&[usize], &[usize]); 6] = [
        (&[6], &[0]),
        (&[3, 4], &[0]),
        (&[3, 4], &[1]),
        (&[2, 3, 4], &[0, 2]),
        (&[2, 3, 4, 4], &[0, 2, 3]),
        (&[2, 3, 4], &[]),
    ];
    for (shape, axes) in cases {
        for keepdims in [true, false] {
            let x = rand_tensor(shape, &mut rng, -1.0, 1.0);
            let axes2 = axes.to_vec();
            check_input_grad("reduce_sum", &x, TOL, move |t, v| {
                let r = t.sum(v, &axes2, keepdims).unwrap();
                spiky_loss(t, r)
            });
            let axes3 = axes.to_vec();
            check_input_grad("reduce_mean", &x, TOL, move |t, v| {
                let r = t.mean(v, &axes3, keepdims).unwrap();
                spiky_loss(t, r)
            });
            // max: draw well-separated values so the argmax is FD-stable
            let x_sep = Tensor::from_fn(shape, |i| ((i * 37 + 11) % 101) as f64 * 0.05 - 2.0);
            let axes4 = axes.to_vec();
            check_input_grad("reduce_max", &x_sep, TOL, move |t, v| {
                let r = t
                    .reduce(mobincep::tensor::ReduceOp::Max, v, &axes4, keepdims)
                    .unwrap();
                spiky_loss(t, r)
            });
        }
    }
}

#[test]
fn reshape_and_concat_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&[2, 6], &mut rng, -1.0, 1.0);
    check_input_grad("reshape", &x, TOL, |t, v| {
        let r = t.reshape(v, &[3, 4]).unwrap();
        spiky_loss(t, r)
    });

    for trial in 0..5 {
        let c1 = 1 + trial % 3;
        let x1 = rand_tensor(&[2, c1, 3, 3], &mut rng, -1.0, 1.0);
        let x2 = rand_tensor(&[2, 2, 3, 3], &mut rng, -1.0, 1.0);
        let x2c = x2.clone();
        check_input_grad("concat_first", &x1, TOL, move |t, v| {
            let other = t.constant(&x2c);
            let r = t.concat_channels(&[v, other]).unwrap();
            spiky_loss(t, r)
        });
        let x1c = x1.clone();
        check_input_grad("concat_second", &x2, TOL, move |t, v| {
            let other = t.constant(&x1c);
            let r = t.concat_channels(&[other, v]).unwrap();
            spiky_loss(t, r)
        });
    }
}

#[test]
fn conv2d_matches_fd_for_input_weight_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // (N, Ci, H, W, Co, k, stride, pad)
    let cases = [
        (1, 1, 5, 5, 1, 3, 1, 1),
        (2, 3, 6, 6, 4, 3, 1, 1),
        (1, 2, 7, 7, 3, 3, 2, 1),
        (2, 2, 5, 5, 2, 1, 1, 0),
        (1, 3, 8, 8, 2, 5, 2, 2),
    ];
    for (n, ci, h, w, co, k, s, p) in cases {
        let x = rand_tensor(&[n, ci, h, w], &mut rng, -1.0, 1.0);
        let wt = rand_tensor(&[co, ci, k, k], &mut rng, -0.5, 0.5);
        let b = rand_tensor(&[co], &mut rng, -0.2, 0.2);

        let (w2, b2) = (wt.clone(), b.clone());
        check_input_grad("conv_input", &x, LAYER_TOL, move |t, xv| {
            let wv = t.constant(&w2);
            let bv = t.constant(&b2);
            let r = t.conv2d(xv, wv, Some(bv), (s, s), (p, p)).unwrap();
            spiky_loss(t, r)
        });
        let (x2, b3) = (x.clone(), b.clone());
        check_input_grad("conv_weight", &wt, LAYER_TOL, move |t, wv| {
            let xv = t.constant(&x2);
            let bv = t.constant(&b3);
            let r = t.conv2d(xv, wv, Some(bv), (s, s), (p, p)).unwrap();
            spiky_loss(t, r)
        });
        let (x3, w3) = (x.clone(), wt.clone());
        check_input_grad("conv_bias", &b, LAYER_TOL, move |t, bv| {
            let xv = t.constant(&x3);
            let wv = t.constant(&w3);
            let r = t.conv2d(xv, wv, Some(bv), (s, s), (p, p)).unwrap();
            spiky_loss(t, r)
        });
    }
}

#[test]
fn depthwise_matches_fd_for_input_and_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = [
        (1, 2, 6, 6, 3, 1),
        (2, 3, 5, 5, 3, 1),
        (1, 4, 8, 8, 3, 2),
        (2, 1, 7, 7, 5, 2),
        (1, 2, 6, 6, 3, 2),
    ];
    for (n, c, h, w, k, s) in cases {
        let p = (k - 1) / 2;
        let x = rand_tensor(&[n, c, h, w], &mut rng, -1.0, 1.0);
        let wt = rand_tensor(&[c, 1, k, k], &mut rng, -0.5, 0.5);

        let w2 = wt.clone();
        check_input_grad("depthwise_input", &x, LAYER_TOL, move |t, xv| {
            let wv = t.constant(&w2);
            let r = t.depthwise_conv2d(xv, wv, (s, s), (p, p)).unwrap();
            spiky_loss(t, r)
        });
        let x2 = x.clone();
        check_input_grad("depthwise_weight", &wt, LAYER_TOL, move |t, wv| {
            let xv = t.constant(&x2);
            let r = t.depthwise_conv2d(xv, wv, (s, s), (p, p)).unwrap();
            spiky_loss(t, r)
        });
    }
}

#[test]
fn pooling_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases = [
        (1, 1, 4, 4, 2, 2, 0),
        (2, 3, 6, 6, 3, 1, 1),
        (1, 2, 8, 8, 2, 2, 0),
        (2, 1, 5, 5, 3, 2, 1),
        (1, 3, 7, 7, 3, 3, 0),
    ];
    for (n, c, h, w, win, s, p) in cases {
        let x = rand_tensor(&[n, c, h, w], &mut rng, -1.0, 1.0);
        check_input_grad("avg_pool", &x, TOL, move |t, v| {
            let r = t.avg_pool(v, (win, win), (s, s), (p, p)).unwrap();
            spiky_loss(t, r)
        });
        check_input_grad("global_avg_pool", &x, TOL, |t, v| {
            let r = t.global_avg_pool(v).unwrap();
            spiky_loss(t, r)
        });
    }
}

#[test]
fn batch_norm_matches_fd_for_input_gamma_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cases = [
        (2, 3, 4, 4),
        (4, 2, 3, 3),
        (2, 1, 5, 5),
        (3, 4, 2, 2),
        (2, 2, 6, 6),
    ];
    for (n, c, h, w) in cases {
        let x = rand_tensor(&[n, c, h, w], &mut rng, -1.5, 1.5);
        let gamma = rand_tensor(&[c], &mut rng, 0.5, 1.5);
        let beta = rand_tensor(&[c], &mut rng, -0.5, 0.5);

        let bn_of = |gamma: &Tensor<f64>, beta: &Tensor<f64>| {
            let mut bn = BatchNorm::<f64>::new(c);
            bn.gamma = gamma.clone();
            bn.beta = beta.clone();
            bn
        };

        // input gradient
        {
            let bn = bn_of(&gamma, &beta);
            let mut tape = Tape::new();
            let xv = tape.leaf(&x, true);
            let (y, _) = bn.forward_train(&mut tape, xv, "bn").unwrap();
            let loss = spiky_loss(&mut tape, y);
            tape.backward(loss).unwrap();
            let analytic = tape.grad_of(xv).unwrap();
            let bn2 = bn_of(&gamma, &beta);
            let numeric = finite_diff_gradient(
                |probe| {
                    let mut t = Tape::new();
                    let xv = t.constant(probe);
                    // constants block the gradient but the value path is identical
                    let xv = t.leaf(&t.value(xv), false);
                    let (y, _) = bn2.forward_train(&mut t, xv, "bn").unwrap();
                    let loss = spiky_loss(&mut t, y);
                    t.value(loss).item()
                },
                &x,
                FD_STEP,
            );
            for (&a, &nv) in analytic.data().iter().zip(numeric.data()) {
                assert!(
                    relative_error(a, nv, 1e-7) < LAYER_TOL,
                    "bn input grad {a} vs {nv}"
                );
            }
        }

        // gamma and beta gradients (they're registered as params)
        let x2 = x.clone();
        let run_with = |gamma: &Tensor<f64>, beta: &Tensor<f64>| -> f64 {
            let bn = bn_of(gamma, beta);
            let mut t = Tape::new();
            let xv = t.constant(&x2);
            let (y, _) = bn.forward_train(&mut t, xv, "bn").unwrap();
            let loss = spiky_loss(&mut t, y);
            t.value(loss).item()
        };
        let (analytic_gamma, analytic_beta) = {
            let bn = bn_of(&gamma, &beta);
            let mut t = Tape::new();
            let xv = t.constant(&x);
            let (y, _) = bn.forward_train(&mut t, xv, "bn").unwrap();
            let loss = spiky_loss(&mut t, y);
            let grads = t.backward(loss).unwrap();
            (grads["bn.gamma"].clone(), grads["bn.beta"].clone())
        };
        let numeric_gamma = finite_diff_gradient(|probe| run_with(probe, &beta), &gamma, FD_STEP);
        let numeric_beta = finite_diff_gradient(|probe| run_with(&gamma, probe), &beta, FD_STEP);
        for (&a, &nv) in analytic_gamma.data().iter().zip(numeric_gamma.data()) {
            assert!(
                relative_error(a, nv, 1e-7) < LAYER_TOL,
                "gamma grad {a} vs {nv}"
            );
        }
        for (&a, &nv) in analytic_beta.data().iter().zip(numeric_beta.data()) {
            assert!(
                relative_error(a, nv, 1e-7) < LAYER_TOL,
                "beta grad {a} vs {nv}"
            );
        }
    }
}

#[test]
fn composite_layers_match_fd() {
    // depthwise-separable block and linear head as used by the model
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..3 {
        let (c_in, c_out) = (2 + trial, 3);
        let sep = DepthwiseSeparable::<f64>::new(c_in, c_out, 3, 1 + trial % 2, &mut rng);
        let x = rand_tensor(&[2, c_in, 6, 6], &mut rng, -1.0, 1.0);

        let run = |sep: &DepthwiseSeparable<f64>, x: &Tensor<f64>| -> f64 {
            let mut t = Tape::new();
            let xv = t.constant(x);
            let y = sep.forward(&mut t, xv, Mode::Infer, "sep").unwrap();
            let loss = spiky_loss(&mut t, y);
            t.value(loss).item()
        };

        let (analytic_dw, analytic_pw) = {
            let mut t = Tape::new();
            let xv = t.constant(&x);
            let y = sep.forward(&mut t, xv, Mode::Train, "sep").unwrap();
            let loss = spiky_loss(&mut t, y);
            let grads = t.backward(loss).unwrap();
            (
                grads["sep.depthwise"].clone(),
                grads["sep.pointwise"].clone(),
            )
        };
        let numeric_dw = finite_diff_gradient(
            |probe| {
                let mut s = sep.clone();
                s.depthwise = probe.clone();
                run(&s, &x)
            },
            &sep.depthwise,
            FD_STEP,
        );
        for (&a, &nv) in analytic_dw.data().iter().zip(numeric_dw.data()) {
            assert!(
                relative_error(a, nv, 1e-7) < LAYER_TOL,
                "dw grad {a} vs {nv}"
            );
        }
        let numeric_pw = finite_diff_gradient(
            |probe| {
                let mut s = sep.clone();
                s.pointwise = probe.clone();
                run(&s, &x)
            },
            &sep.pointwise,
            FD_STEP,
        );
        for (&a, &nv) in analytic_pw.data().iter().zip(numeric_pw.data()) {
            assert!(
                relative_error(a, nv, 1e-7) < LAYER_TOL,
                "pw grad {a} vs {nv}"
            );
        }
    }

    let lin = Linear::<f64>::new(5, 3, &mut rng);
    let x = rand_tensor(&[4, 5], &mut rng, -1.0, 1.0);
    let (analytic_w, analytic_b) = {
        let mut t = Tape::new();
        let xv = t.constant(&x);
        let y = lin.forward(&mut t, xv, Mode::Train, "head").unwrap();
        let loss = spiky_loss(&mut t, y);
        let grads = t.backward(loss).unwrap();
        (grads["head.weight"].clone(), grads["head.bias"].clone())
    };
    let run = |lin: &Linear<f64>| -> f64 {
        let mut t = Tape::new();
        let xv = t.constant(&x);
        let y = lin.forward(&mut t, xv, Mode::Infer, "head").unwrap();
        let loss = spiky_loss(&mut t, y);
        t.value(loss).item()
    };
    let numeric_w = finite_diff_gradient(
        |probe| {
            let mut l = lin.clone();
            l.weight = probe.clone();
            run(&l)
        },
        &lin.weight,
        FD_STEP,
    );
    for (&a, &nv) in analytic_w.data().iter().zip(numeric_w.data()) {
        assert!(
            relative_error(a, nv, 1e-7) < TOL,
            "linear weight grad {a} vs {nv}"
        );
    }
    let numeric_b = finite_diff_gradient(
        |probe| {
            let mut l = lin.clone();
            l.bias = probe.clone();
            run(&l)
        },
        &lin.bias,
        FD_STEP,
    );
    for (&a, &nv) in analytic_b.data().iter().zip(numeric_b.data()) {
        assert!(
            relative_error(a, nv, 1e-7) < TOL,
            "linear bias grad {a} vs {nv}"
        );
    }
}

#[test]
fn conv_layer_struct_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let conv = Conv2d::<f64>::new(3, 4, 3, 2, 1, true, &mut rng);
    let x = rand_tensor(&[2, 3, 7, 7], &mut rng, -1.0, 1.0);
    let analytic = {
        let mut t = Tape::new();
        let xv = t.constant(&x);
        let y = conv.forward(&mut t, xv, Mode::Train, "c").unwrap();
        let loss = spiky_loss(&mut t, y);
        t.backward(loss).unwrap()["c.weight"].clone()
    };
    let numeric = finite_diff_gradient(
        |probe| {
            let mut c = conv.clone();
            c.weight = probe.clone();
            let mut t = Tape::new();
            let xv = t.constant(&x);
            let y = c.forward(&mut t, xv, Mode::Infer, "c").unwrap();
            let loss = spiky_loss(&mut t, y);
            t.value(loss).item()
        },
        &conv.weight,
        FD_STEP,
    );
    for (&a, &nv) in analytic.data().iter().zip(numeric.data()) {
        assert!(
            relative_error(a, nv, 1e-7) < LAYER_TOL,
            "conv struct weight {a} vs {nv}"
        );
    }
}
