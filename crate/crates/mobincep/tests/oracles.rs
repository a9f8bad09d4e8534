//! Independent-oracle equivalence: the optimized kernels against naive
//! transcriptions of the definitions, and the regularizer terms against a
//! raw recomputation. Property-style coverage over randomized shapes.

mod common;

use common::{eq1_terms_from_definitions, naive_avg_pool, naive_conv2d, naive_depthwise_separable};
use mobincep::loss::{
    kmeans, regularizer_terms, ClusterConfig, ClusterState, LossWeights, RegularizerOptions,
};
use mobincep::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| 2.0 * rng.random::<f64>() - 1.0)
}

#[test]
fn conv2d_matches_nested_loop_reference_on_many_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    // the spec's canonical case plus a sweep of kernel/stride/padding mixes
    let mut cases = vec![(
        2usize, 3usize, 4usize, 8usize, 8usize, 3usize, 1usize, 1usize,
    )];
    for trial in 0..24 {
        let k = [1, 3, 5][trial % 3];
        cases.push((
            1 + trial % 3,            // n
            1 + (trial * 7) % 4,      // ci
            1 + (trial * 5) % 5,      // co
            k + 2 + (trial * 3) % 6,  // h
            k + 2 + (trial * 11) % 6, // w
            k,
            1 + trial % 2, // stride
            (k - 1) / 2,   // same padding
        ));
    }
    for (n, ci, co, h, w, k, s, p) in cases {
        let x = rand_tensor(&[n, ci, h, w], &mut rng);
        let wt = rand_tensor(&[co, ci, k, k], &mut rng);
        let b = rand_tensor(&[co], &mut rng);

        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let wv = tape.constant(&wt);
        let bv = tape.constant(&b);
        let y = tape.conv2d(xv, wv, Some(bv), (s, s), (p, p)).unwrap();
        let fast = tape.value(y);
        let slow = naive_conv2d(&x, &wt, Some(&b), (s, s), (p, p));
        assert_eq!(fast.shape(), slow.shape());
        let diff = fast.max_abs_diff(&slow);
        assert!(
            diff < 1e-5,
            "conv mismatch {diff:.2e} for n{n} ci{ci} co{co} {h}x{w} k{k} s{s} p{p}"
        );
    }
}

#[test]
fn depthwise_separable_matches_decomposition_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..20 {
        let c = 1 + trial % 4;
        let co = 1 + (trial * 3) % 5;
        let k = [3, 5][trial % 2];
        let s = 1 + trial % 2;
        let p = (k - 1) / 2;
        let h = k + 3 + trial % 4;
        let x = rand_tensor(&[2, c, h, h], &mut rng);
        let dw = rand_tensor(&[c, 1, k, k], &mut rng);
        let pw = rand_tensor(&[co, c, 1, 1], &mut rng);

        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let dv = tape.constant(&dw);
        let pv = tape.constant(&pw);
        let mid = tape.depthwise_conv2d(xv, dv, (s, s), (p, p)).unwrap();
        let y = tape.conv2d(mid, pv, None, (1, 1), (0, 0)).unwrap();
        let fast = tape.value(y);

        let slow = naive_depthwise_separable(&x, &dw, &pw, (s, s), (p, p));
        let diff = fast.max_abs_diff(&slow);
        assert!(
            diff < 1e-5,
            "separable mismatch {diff:.2e} (c{c} co{co} k{k} s{s})"
        );
    }
}

#[test]
fn avg_pool_matches_nested_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    // the spec's canonical 2x3x6x6 case plus shape sweep
    let mut cases = vec![(2usize, 3usize, 6usize, 6usize, 2usize, 2usize, 0usize)];
    for trial in 0..20 {
        let win = 2 + trial % 3;
        cases.push((
            1 + trial % 2,
            1 + trial % 3,
            win + 2 + trial % 5,
            win + 2 + (trial * 3) % 5,
            win,
            1 + trial % 2,
            trial % 2,
        ));
    }
    for (n, c, h, w, win, s, p) in cases {
        let x = rand_tensor(&[n, c, h, w], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let y = tape.avg_pool(xv, (win, win), (s, s), (p, p)).unwrap();
        let fast = tape.value(y);
        let slow = naive_avg_pool(&x, (win, win), (s, s), (p, p));
        let diff = fast.max_abs_diff(&slow);
        assert!(diff < 1e-6, "pool mismatch {diff:.2e} (win{win} s{s} p{p})");
    }
}

#[test]
fn global_avg_pool_of_constant_is_the_constant() {
    let mut tape = Tape::new();
    let x = tape.constant(&Tensor::full(&[2, 3, 5, 7], 7.0f64));
    let y = tape.global_avg_pool(x).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 7.0).abs() < 1e-12);
    }
}

#[test]
fn regularizer_terms_match_raw_definitions() {
    // random small blob configurations, K-means converged, then the module
    // terms against the definition recomputation
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for trial in 0..20 {
        let k = 3;
        let d = 2;
        let m = 8;
        // well-separated blob centers keep the assignment unambiguous
        let centers: Vec<[f64; 2]> = (0..k)
            .map(|c| {
                let angle = c as f64 * 2.1 + trial as f64 * 0.37;
                [4.0 * angle.cos(), 4.0 * angle.sin()]
            })
            .collect();
        let points: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let c = i % k;
                vec![
                    centers[c][0] + 0.6 * (rng.random::<f64>() - 0.5),
                    centers[c][1] + 0.6 * (rng.random::<f64>() - 0.5),
                ]
            })
            .collect();
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let tensor = Tensor::from_vec(&[m, d], flat).unwrap();

        let init = Tensor::from_fn(&[k, d], |i| centers[i / d][i % d]);
        let result = kmeans(&tensor, k, &init, 50, 1e-12).unwrap();

        let mut config = ClusterConfig::new(k, d);
        config.min_fill = k;
        let global = Tensor::from_fn(&[d], |j| {
            points.iter().map(|p| p[j]).sum::<f64>() / m as f64
        });
        let state = ClusterState::from_centroids(config, result.centroids.clone(), global);

        let opts = RegularizerOptions {
            weights: LossWeights {
                gamma1: 0.7,
                gamma2: 1.3,
            },
            eps_den: 1e-8,
            scatter_mean: false,
        };
        let mut tape = Tape::new();
        let z = tape.leaf(&tensor, true);
        let terms = regularizer_terms(&mut tape, z, &state, &opts).unwrap();
        let module_sep = tape.value(terms.separation).item();
        let module_scat = tape.value(terms.scatter).item();

        let (oracle_sep, oracle_scat) = eq1_terms_from_definitions(
            &points,
            &result.assignments,
            k,
            opts.weights.gamma1,
            opts.weights.gamma2,
            opts.eps_den,
        );
        assert!(
            (module_sep - oracle_sep).abs() < 1e-6,
            "separation {module_sep} vs oracle {oracle_sep} (trial {trial})"
        );
        assert!(
            (module_scat - oracle_scat).abs() < 1e-6,
            "scatter {module_scat} vs oracle {oracle_scat} (trial {trial})"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_matches_reference_on_random_shapes(
        n in 1usize..3,
        ci in 1usize..4,
        co in 1usize..4,
        extra_h in 0usize..5,
        extra_w in 0usize..5,
        k_idx in 0usize..3,
        s in 1usize..3,
        seed in 0u64..1000,
    ) {
        let k = [1usize, 3, 5][k_idx];
        let p = (k - 1) / 2;
        let (h, w) = (k + 1 + extra_h, k + 1 + extra_w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&[n, ci, h, w], &mut rng);
        let wt = rand_tensor(&[co, ci, k, k], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let wv = tape.constant(&wt);
        let y = tape.conv2d(xv, wv, None, (s, s), (p, p)).unwrap();
        let slow = naive_conv2d(&x, &wt, None, (s, s), (p, p));
        prop_assert!(tape.value(y).max_abs_diff(&slow) < 1e-5);
    }

    #[test]
    fn kmeans_objective_never_increases(
        m in 6usize..30,
        d in 1usize..4,
        k in 1usize..5,
        seed in 0u64..10_000,
    ) {
        prop_assume!(k <= m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Tensor::<f64>::from_fn(&[m, d], |_| 10.0 * rng.random::<f64>() - 5.0);
        let init = Tensor::<f64>::from_fn(&[k, d], |_| 10.0 * rng.random::<f64>() - 5.0);
        let r = kmeans(&pts, k, &init, 25, 0.0).unwrap();
        for pair in r.wcss.windows(2) {
            prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn softmax_rows_always_normalized(
        rows in 1usize..5,
        cols in 2usize..8,
        seed in 0u64..1000,
        scale in 1.0f32..60.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::from_fn(&[rows, cols], |_| scale * (rng.random::<f32>() - 0.5));
        let p = mobincep::loss::softmax_rows(&logits);
        for row in p.data().chunks_exact(cols) {
            let sum: f32 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-5);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
