//! Shared reference oracles for the integration suites. Everything here is
//! deliberately naive — direct transcriptions of the definitions — and
//! never calls into the code paths it is used to verify.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use mobincep::tensor::Tensor;

/// Six-nested-loop cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor<f64> {
    let (n, ci, h, w) = shape4(input);
    let (co, ci_w, kh, kw) = shape4(weight);
    assert_eq!(ci, ci_w);
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for img in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|b| b.data()[oc]).unwrap_or(0.0);
                    for ic in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as i64 * stride.0 as i64 + ky as i64 - pad.0 as i64;
                                let ix = ox as i64 * stride.1 as i64 + kx as i64 - pad.1 as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let iv = input.data()
                                    [((img * ci + ic) * h + iy as usize) * w + ix as usize];
                                let wv = weight.data()[((oc * ci + ic) * kh + ky) * kw + kx];
                                acc += iv * wv;
                            }
                        }
                    }
                    out[((img * co + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out).unwrap()
}

/// Depthwise-separable reference built from per-channel naive convolutions
/// mixed by the pointwise weights — the decomposition definition.
pub fn naive_depthwise_separable(
    input: &Tensor<f64>,
    depthwise: &Tensor<f64>, // [C,1,k,k]
    pointwise: &Tensor<f64>, // [Co,C,1,1]
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor<f64> {
    let (n, c, h, w) = shape4(input);
    let (co, c_pw, _, _) = shape4(pointwise);
    assert_eq!(c, c_pw);
    let (kh, kw) = (depthwise.shape()[2], depthwise.shape()[3]);
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;

    // per-channel spatial convolution
    let mut mids = Vec::with_capacity(c);
    for ch in 0..c {
        let xc = Tensor::from_fn(&[n, 1, h, w], |i| {
            let (img, rest) = (i / (h * w), i % (h * w));
            input.data()[(img * c + ch) * h * w + rest]
        });
        let wc = Tensor::from_slice(
            &[1, 1, kh, kw],
            &depthwise.data()[ch * kh * kw..(ch + 1) * kh * kw],
        )
        .unwrap();
        mids.push(naive_conv2d(&xc, &wc, None, stride, pad));
    }
    // pointwise mix
    let mut out = vec![0.0; n * co * oh * ow];
    for img in 0..n {
        for oc in 0..co {
            for pos in 0..oh * ow {
                let mut acc = 0.0;
                for ch in 0..c {
                    acc += pointwise.data()[oc * c + ch] * mids[ch].data()[img * oh * ow + pos];
                }
                out[(img * co + oc) * oh * ow + pos] = acc;
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out).unwrap()
}

/// Nested-loop mean pooling with zero padding counted in the divisor.
pub fn naive_avg_pool(
    input: &Tensor<f64>,
    window: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor<f64> {
    let (n, c, h, w) = shape4(input);
    let oh = (h + 2 * pad.0 - window.0) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - window.1) / stride.1 + 1;
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..window.0 {
                    for kx in 0..window.1 {
                        let iy = oy as i64 * stride.0 as i64 + ky as i64 - pad.0 as i64;
                        let ix = ox as i64 * stride.1 as i64 + kx as i64 - pad.1 as i64;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        acc += input.data()[(plane * h + iy as usize) * w + ix as usize];
                    }
                }
                out[(plane * oh + oy) * ow + ox] = acc / (window.0 * window.1) as f64;
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out).unwrap()
}

fn shape4<T: mobincep::Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4);
    (s[0], s[1], s[2], s[3])
}

/// The two regularizer terms recomputed from raw definitions: cluster
/// centroids are means of their assigned points, the global centroid is the
/// mean of all points, `d` is the Euclidean distance and `s_k` the sum of
/// member distances to the cluster centroid.
pub fn eq1_terms_from_definitions(
    points: &[Vec<f64>],
    assignments: &[usize],
    k: usize,
    gamma1: f64,
    gamma2: f64,
    eps_den: f64,
) -> (f64, f64) {
    let d = points[0].len();
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (c, &v) in centroids[a].iter_mut().zip(p) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            for v in c.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    let mut global = vec![0.0; d];
    for p in points {
        for (g, &v) in global.iter_mut().zip(p) {
            *g += v / points.len() as f64;
        }
    }

    let mut sum_d2 = 0.0;
    for c in 0..k {
        if counts[c] == 0 {
            continue; // absent clusters contribute through the module's fallback
        }
        sum_d2 += centroids[c]
            .iter()
            .zip(&global)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let separation = gamma1 / (sum_d2 + eps_den);

    let mut scatter = 0.0;
    for c in 0..k {
        let mut s_k = 0.0;
        for (p, &a) in points.iter().zip(assignments) {
            if a == c {
                let dist2: f64 = p
                    .iter()
                    .zip(&centroids[c])
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum();
                s_k += dist2.sqrt();
            }
        }
        scatter += s_k * s_k;
    }
    (separation, gamma2 * scatter)
}
