use hsavsr_core::tensor::{
    backward_warp, bilinear_resize, concat_channels, conv2d, pixel_shuffle, pixel_unshuffle,
    softmax_over_axis, ConvOptions, PadMode, ResizeScale,
};
use hsavsr_core::{FlowField, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0f32..1.0))
}

/// Six nested loops over output channel, row, column, input channel and taps.
fn conv_oracle(x: &Tensor, k: &Tensor, opts: ConvOptions) -> (Vec<usize>, Vec<f64>) {
    let (ci, h, w) = x.chw().unwrap();
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * opts.pad_h - kh) / opts.stride + 1;
    let wo = (w + 2 * opts.pad_w - kw) / opts.stride + 1;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for y in 0..ho {
            for xx in 0..wo {
                let mut acc = 0.0;
                for c in 0..ci {
                    for i in 0..kh {
                        for j in 0..kw {
                            let sy = (y * opts.stride + i) as isize - opts.pad_h as isize;
                            let sx = (xx * opts.stride + j) as isize - opts.pad_w as isize;
                            let v = match opts.pad_mode {
                                PadMode::Zero => {
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    x[[c, sy as usize, sx as usize]]
                                }
                                PadMode::Replicate => {
                                    let sy = sy.clamp(0, h as isize - 1) as usize;
                                    let sx = sx.clamp(0, w as isize - 1) as usize;
                                    x[[c, sy, sx]]
                                }
                            };
                            acc += k.data()[((o * ci + c) * kh + i) * kw + j] as f64 * v as f64;
                        }
                    }
                }
                out[(o * ho + y) * wo + xx] = acc;
            }
        }
    }
    (vec![co, ho, wo], out)
}

fn assert_close(t: &Tensor, oracle: &[f64], tol: f64) {
    assert_eq!(t.len(), oracle.len());
    for (i, (&a, &b)) in t.data().iter().zip(oracle).enumerate() {
        assert!((a as f64 - b).abs() <= tol, "index {i}: {a} vs {b}");
    }
}

#[test]
fn conv_mean_kernel_on_ones() {
    let x = Tensor::<f32>::full([1, 3, 3], 1.0);
    let k = Tensor::<f32>::full([1, 1, 3, 3], 1.0 / 9.0);
    let y = conv2d(&x, &k, None, ConvOptions::same(3, 3, PadMode::Zero)).unwrap();
    assert!((y[[0, 1, 1]] - 1.0).abs() < 1e-6);
    assert!((y[[0, 0, 0]] - 4.0 / 9.0).abs() < 1e-6);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let x = random(&[2, 5, 5], 1);
    let k = random(&[3, 2, 3, 3], 2);
    let opts = ConvOptions::same(3, 3, PadMode::Zero);
    let y = conv2d(&x, &k, None, opts).unwrap();
    let (shape, oracle) = conv_oracle(&x, &k, opts);
    assert_eq!(y.shape(), &shape[..]);
    assert_close(&y, &oracle, 1e-5);
}

#[test]
fn conv_stride_padding_and_bias() {
    let x = random(&[3, 7, 6], 3);
    let k = random(&[2, 3, 3, 2], 4);
    let b = Tensor::new([2], vec![0.5, -0.25]).unwrap();
    for pad_mode in [PadMode::Zero, PadMode::Replicate] {
        let opts = ConvOptions { pad_mode, pad_h: 1, pad_w: 2, stride: 2 };
        let y = conv2d(&x, &k, Some(&b), opts).unwrap();
        let (shape, mut oracle) = conv_oracle(&x, &k, opts);
        let plane = shape[1] * shape[2];
        for (i, v) in oracle.iter_mut().enumerate() {
            *v += b.data()[i / plane] as f64;
        }
        assert_eq!(y.shape(), &shape[..]);
        assert_close(&y, &oracle, 1e-5);
    }
}

#[test]
fn conv_shape_errors_name_both_shapes() {
    let x = random(&[2, 4, 4], 1);
    let k = random(&[1, 3, 3, 3], 2);
    let e = conv2d(&x, &k, None, ConvOptions::same(3, 3, PadMode::Zero)).unwrap_err().to_string();
    assert!(e.contains("[2, 4, 4]") && e.contains("[1, 3, 3, 3]"), "{e}");
    let k = random(&[1, 2, 3, 3], 2);
    let bad = ConvOptions { stride: 0, ..ConvOptions::same(3, 3, PadMode::Zero) };
    assert!(conv2d(&x, &k, None, bad).is_err());
}

#[test]
fn softmax_examples() {
    let u = softmax_over_axis(&Tensor::<f32>::new([3], vec![0.0, 0.0, 0.0]).unwrap(), 0).unwrap();
    assert!(u.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));
    let s = softmax_over_axis(&Tensor::<f32>::new([2], vec![1000.0, 0.0]).unwrap(), 0).unwrap();
    assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1].abs() < 1e-6);
    assert!(softmax_over_axis(&Tensor::<f32>::zeros([0, 2]), 0).is_err());
    assert!(softmax_over_axis(&Tensor::<f32>::zeros([2, 2]), 2).is_err());
}

#[test]
fn softmax_matches_f64_oracle() {
    let x = random(&[5, 4, 4], 5).scale(4.0);
    let s = softmax_over_axis(&x, 0).unwrap();
    let mut oracle = vec![0.0; x.len()];
    for p in 0..16 {
        let e: Vec<f64> = (0..5).map(|i| (x.data()[i * 16 + p] as f64).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut total = 0.0;
        for i in 0..5 {
            oracle[i * 16 + p] = e[i] / z;
            total += s.data()[i * 16 + p] as f64;
        }
        assert!((total - 1.0).abs() < 1e-6);
    }
    assert_close(&s, &oracle, 1e-6);
}

#[test]
fn bilinear_examples() {
    let x = random(&[2, 3, 5], 6);
    assert_eq!(bilinear_resize(&x, ResizeScale::int(1)).unwrap(), x);
    let c = bilinear_resize(&Tensor::full([1, 1, 1], 5.0), ResizeScale::int(4)).unwrap();
    assert_eq!(c.shape(), &[1, 4, 4]);
    assert!(c.data().iter().all(|&v| v == 5.0));
    assert!(bilinear_resize(&x, ResizeScale { num: 1, den: 8 }).is_err());
}

#[test]
fn bilinear_matches_closed_form() {
    let x = Tensor::new([1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = bilinear_resize(&x, ResizeScale::int(2)).unwrap();
    // half-pixel centres, edge-clamped source coordinates
    let coord = |d: usize| ((d as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
    let mut oracle = vec![0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            let (sy, sx) = (coord(i), coord(j));
            // f(y, x) = 2y + x is bilinear, so interpolation is exact
            oracle[i * 4 + j] = 2.0 * sy + sx;
        }
    }
    assert_close(&y, &oracle, 1e-6);
}

#[test]
fn pixel_shuffle_examples() {
    let x = Tensor::new([4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2]);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    let big = random(&[16, 5, 7], 7);
    let y = pixel_shuffle(&big, 2).unwrap();
    assert_eq!(y.shape(), &[4, 10, 14]);
    assert_eq!(y.len(), 560);
    let mut sorted_in = big.data().to_vec();
    let mut sorted_out = y.data().to_vec();
    sorted_in.sort_by(f32::total_cmp);
    sorted_out.sort_by(f32::total_cmp);
    assert_eq!(sorted_in, sorted_out);
    assert!(pixel_shuffle(&random(&[6, 2, 2], 1), 2).is_err());
}

fn ramp(h: usize, w: usize) -> Tensor {
    Tensor::from_fn([1, h, w], |i| (i % w) as f32)
}

#[test]
fn warp_examples() {
    let x = random(&[2, 6, 6], 8);
    assert_eq!(backward_warp(&x, &FlowField::zeros(6, 6)).unwrap(), x);
    let r = ramp(3, 5);
    let shifted = backward_warp(&r, &FlowField::uniform(3, 5, 1.0, 0.0)).unwrap();
    for y in 0..3 {
        let row: Vec<f32> = (0..5).map(|x| shifted[[0, y, x]]).collect();
        assert_eq!(row, vec![1.0, 2.0, 3.0, 4.0, 4.0]);
    }
    assert!(backward_warp(&x, &FlowField::zeros(5, 6)).is_err());
}

#[test]
fn warp_matches_sampling_oracle() {
    let x = random(&[2, 6, 6], 9);
    let flow = FlowField::new(random(&[2, 6, 6], 10).scale(2.5)).unwrap();
    let y = backward_warp(&x, &flow).unwrap();
    let sample = |c: usize, yy: isize, xx: isize| {
        x[[c, yy.clamp(0, 5) as usize, xx.clamp(0, 5) as usize]] as f64
    };
    let mut oracle = vec![0.0; 72];
    for c in 0..2 {
        for py in 0..6 {
            for px in 0..6 {
                let sx = px as f64 + flow.dx()[py * 6 + px] as f64;
                let sy = py as f64 + flow.dy()[py * 6 + px] as f64;
                let (x0, y0) = (sx.floor() as isize, sy.floor() as isize);
                let (tx, ty) = (sx - sx.floor(), sy - sy.floor());
                oracle[(c * 6 + py) * 6 + px] = (1.0 - ty)
                    * ((1.0 - tx) * sample(c, y0, x0) + tx * sample(c, y0, x0 + 1))
                    + ty * ((1.0 - tx) * sample(c, y0 + 1, x0) + tx * sample(c, y0 + 1, x0 + 1));
            }
        }
    }
    assert_close(&y, &oracle, 1e-5);
}

#[test]
fn concat_examples() {
    let z = Tensor::zeros([1, 2, 2]);
    let o = Tensor::full([1, 2, 2], 1.0);
    let c = concat_channels(&z, &o).unwrap();
    assert_eq!(c.slice_channels(0, 1).unwrap(), z);
    assert_eq!(c.slice_channels(1, 2).unwrap(), o);
    let x = random(&[3, 4, 4], 11);
    assert_eq!(concat_channels(&x, &Tensor::zeros([0, 4, 4])).unwrap(), x);
    let y = random(&[5, 4, 4], 12);
    let xy = concat_channels(&x, &y).unwrap();
    assert_eq!(xy.shape(), &[8, 4, 4]);
    assert_eq!(xy.slice_channels(0, 3).unwrap(), x);
    assert_eq!(xy.slice_channels(3, 8).unwrap(), y);
    assert!(concat_channels(&x, &random(&[1, 4, 3], 1)).is_err());
}

fn shape3() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..5, 1usize..8, 1usize..8)
}

proptest! {
    #[test]
    fn delta_kernel_is_identity((c, h, w) in shape3(), seed in any::<u64>()) {
        let x = random(&[c, h, w], seed);
        let mut k = Tensor::zeros([c, c, 3, 3]);
        for i in 0..c {
            k.data_mut()[(i * c + i) * 9 + 4] = 1.0;
        }
        let y = conv2d(&x, &k, None, ConvOptions::same(3, 3, PadMode::Zero)).unwrap();
        prop_assert_eq!(y, x);
    }

    #[test]
    fn softmax_ignores_constant_shift(
        (c, h, w) in shape3(),
        seed in any::<u64>(),
        shift in -50.0f32..50.0,
    ) {
        let x = random(&[c, h, w], seed).scale(5.0);
        let a = softmax_over_axis(&x, 0).unwrap();
        let b = softmax_over_axis(&x.map(|v| v + shift), 0).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
        prop_assert!(a.data().iter().all(|&v| v > 0.0 || c > 1));
    }

    #[test]
    fn zero_flow_warp_is_exact((c, h, w) in shape3(), seed in any::<u64>()) {
        let x = random(&[c, h, w], seed);
        prop_assert_eq!(backward_warp(&x, &FlowField::zeros(h, w)).unwrap(), x);
    }

    #[test]
    fn pixel_shuffle_round_trip(c in 1usize..4, h in 1usize..5, w in 1usize..5, r in 1usize..4, seed in any::<u64>()) {
        let x = random(&[c * r * r, h, w], seed);
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
    }

    #[test]
    fn finite_inputs_give_finite_outputs((c, h, w) in shape3(), seed in any::<u64>(), scale in 1e-3f32..1e3) {
        let x = random(&[c, h, w], seed).scale(scale);
        let k = random(&[2, c, 3, 3], seed ^ 1);
        prop_assert!(conv2d(&x, &k, None, ConvOptions::same(3, 3, PadMode::Replicate)).unwrap().is_finite());
        prop_assert!(softmax_over_axis(&x, 0).unwrap().is_finite());
        prop_assert!(bilinear_resize(&x, ResizeScale::int(2)).unwrap().is_finite());
        let flow = FlowField::new(random(&[2, h, w], seed ^ 2).scale(10.0)).unwrap();
        prop_assert!(backward_warp(&x, &flow).unwrap().is_finite());
    }
}
