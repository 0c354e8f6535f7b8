//! Primitive ops checked against direct nested-loop references and finite
//! differences.

use fastsal_core::cdc::{cdc_backward, cdc_decomposed, cdc_forward, CdcParams};
use fastsal_core::gradcheck::grad_check;
use fastsal_core::ops::conv::{conv2d, conv2d_backward, depthwise_conv2d, ConvSpec};
use fastsal_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct cross-correlation with zero padding.
fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f64> {
    let s = x.shape();
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let k = w.shape();
    let (cout, cin_g, kh, kw) = (k[0], k[1], k[2], k[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b_ in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin_g {
                        let c = grp * cin_g + ci;
                        for i in 0..kh {
                            for j in 0..kw {
                                let ih = (oh * stride + i) as isize - pad as isize;
                                let iw = (ow * stride + j) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((co * cin_g + ci) * kh + i) * kw + j]
                                    * x.data()[((b_ * cin + c) * h + ih as usize) * wd + iw as usize];
                            }
                        }
                    }
                    out[((b_ * cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    out
}

/// The central difference convolution written term by term.
fn naive_cdc(x: &Tensor<f64>, w: &Tensor<f64>, theta: f64) -> Vec<f64> {
    let s = x.shape();
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let cout = w.shape()[0];
    let at = |b: usize, c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= wd as isize {
            0.0
        } else {
            x.data()[((b * cin + c) * h + i as usize) * wd + j as usize]
        }
    };
    let mut out = vec![0.0; n * cout * h * wd];
    for b in 0..n {
        for co in 0..cout {
            for i in 0..h as isize {
                for j in 0..wd as isize {
                    let (mut diff, mut plain) = (0.0, 0.0);
                    for ci in 0..cin {
                        let center = at(b, ci, i, j);
                        for di in -1..=1isize {
                            for dj in -1..=1isize {
                                let wv = w.data()[((co * cin + ci) * 3 + (di + 1) as usize) * 3 + (dj + 1) as usize];
                                let v = at(b, ci, i + di, j + dj);
                                diff += wv * (v - center);
                                plain += wv * v;
                            }
                        }
                    }
                    out[((b * cout + co) * h + i as usize) * wd + j as usize] =
                        theta * diff + (1.0 - theta) * plain;
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn conv2d_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
    let y = conv2d(&x, &w, None, ConvSpec::new(1, 0)).unwrap();
    assert!(max_abs_diff(y.data(), &naive_conv(&x, &w, None, 1, 0, 1)) < 1e-6);
}

#[test]
fn depthwise_matches_naive_loop_and_degenerate_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::<f64>::uniform(&[2, 4, 7, 6], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[4, 1, 3, 3], -1.0, 1.0, &mut rng);
    for stride in [1, 2] {
        let y = depthwise_conv2d(&x, &w, stride, 1).unwrap();
        assert!(max_abs_diff(y.data(), &naive_conv(&x, &w, None, stride, 1, 4)) < 1e-6);
    }
    let x1 = Tensor::<f64>::uniform(&[1, 1, 6, 6], -1.0, 1.0, &mut rng);
    let w1 = Tensor::<f64>::uniform(&[1, 1, 3, 3], -1.0, 1.0, &mut rng);
    assert_eq!(
        depthwise_conv2d(&x1, &w1, 1, 1).unwrap(),
        conv2d(&x1, &w1, None, ConvSpec::new(1, 1)).unwrap()
    );
}

#[test]
fn cdc_matches_literal_definition_and_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::<f64>::uniform(&[2, 3, 6, 7], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
    let p = CdcParams { w: &w, bias: None, theta: 0.7 };
    let oracle = naive_cdc(&x, &w, 0.7);
    assert!(max_abs_diff(cdc_forward(&x, &p).unwrap().data(), &oracle) < 1e-5);
    assert!(max_abs_diff(cdc_decomposed(&x, &p).unwrap().data(), &oracle) < 1e-5);
}

#[test]
fn cdc_is_affine_in_theta() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
    let at = |theta| cdc_forward(&x, &CdcParams { w: &w, bias: None, theta }).unwrap();
    let (y0, y1, yt) = (at(0.0), at(1.0), at(0.35));
    let mix: Vec<f64> = y0.data().iter().zip(y1.data()).map(|(a, b)| 0.65 * a + 0.35 * b).collect();
    assert!(max_abs_diff(yt.data(), &mix) < 1e-5);
}

#[test]
fn cdc_backward_reduces_to_conv_at_theta_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[3], -1.0, 1.0, &mut rng);
    let gy = Tensor::<f64>::uniform(&[1, 3, 5, 5], -1.0, 1.0, &mut rng);
    let c = cdc_backward(&x, &CdcParams { w: &w, bias: Some(&b), theta: 0.0 }, &gy).unwrap();
    let v = conv2d_backward(&x, &w, true, ConvSpec::same(3), &gy).unwrap();
    assert_eq!(c.x, v.x);
    assert_eq!(c.w, v.w);
    assert_eq!(c.b, v.b);
}

#[test]
fn cdc_weight_gradient_vanishes_on_constant_interior() {
    // upstream is zero on the border so zero-padding effects do not enter
    let x = Tensor::<f64>::full(&[1, 2, 6, 6], 1.7);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let w = Tensor::<f64>::uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
    let gy = Tensor::<f64>::from_fn(&[1, 2, 6, 6], |i| {
        let (r, c) = ((i / 6) % 6, i % 6);
        if (1..5).contains(&r) && (1..5).contains(&c) {
            0.3 + 0.01 * i as f64
        } else {
            0.0
        }
    });
    let g = cdc_backward(&x, &CdcParams { w: &w, bias: None, theta: 1.0 }, &gy).unwrap();
    assert!(g.w.max_abs() < 1e-12);
}

#[test]
fn every_primitive_passes_finite_differences() {
    let cases: Vec<(&str, Vec<Vec<usize>>)> = vec![
        ("conv2d", vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3], vec![3]]),
        ("depthwise_conv2d", vec![vec![2, 3, 6, 6], vec![3, 1, 3, 3]]),
        ("cdc", vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3], vec![3]]),
        ("batchnorm", vec![vec![2, 3, 4, 4]]),
        ("batchnorm_infer", vec![vec![2, 3, 4, 4]]),
        ("relu6", vec![vec![2, 3, 4, 4]]),
        ("sigmoid", vec![vec![2, 3, 4, 4]]),
        ("softplus", vec![vec![2, 3, 4, 4]]),
        ("normalize_sum", vec![vec![2, 1, 4, 4]]),
        ("linear", vec![vec![3, 8], vec![5, 8], vec![5]]),
        ("upsample_nearest", vec![vec![1, 2, 3, 4]]),
        ("upsample_bilinear", vec![vec![1, 2, 3, 4]]),
        ("max_pool2d", vec![vec![1, 2, 4, 6]]),
        ("concat_channels", vec![vec![1, 2, 3, 3], vec![1, 1, 3, 3]]),
        ("add", vec![vec![1, 2, 3, 3], vec![1, 2, 3, 3]]),
    ];
    for (op, shapes) in &cases {
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let e32 = grad_check::<f32>(op, &refs, 1).unwrap();
        let e64 = grad_check::<f64>(op, &refs, 1).unwrap();
        assert!(e32 < 1e-2, "{op}: f32 relative error {e32}");
        assert!(e64 < 1e-4, "{op}: f64 relative error {e64}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_shape_algebra_and_oracle(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..9, w in 3usize..9, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, pad in 0usize..3, seed in any::<u64>(),
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(&[n, cin, h, w], -1.0, 1.0, &mut rng);
        let kern = Tensor::<f64>::uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[cout], -1.0, 1.0, &mut rng);
        let y = conv2d(&x, &kern, Some(&b), ConvSpec::new(stride, pad)).unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        prop_assert_eq!(y.shape(), &[n, cout, ho, wo]);
        prop_assert!(max_abs_diff(y.data(), &naive_conv(&x, &kern, Some(&b), stride, pad, 1)) < 1e-6);
    }

    #[test]
    fn conv_is_linear_without_bias(a in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = Tensor::<f64>::uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let x2 = Tensor::<f64>::uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let spec = ConvSpec::same(3);
        let mixed = x1.scale(a).add(&x2).unwrap();
        let lhs = conv2d(&mixed, &w, None, spec).unwrap();
        let rhs = conv2d(&x1, &w, None, spec).unwrap().scale(a).add(&conv2d(&x2, &w, None, spec).unwrap()).unwrap();
        prop_assert!(max_abs_diff(lhs.data(), rhs.data()) < 1e-5);
    }
}
