use hsavsr_core::degradation::{
    area_downsample, compress_standin, dct_8x8, dct_quantize, degrade_frame, degrade_sequence,
    gaussian_kernel, idct_8x8, sample_params, ClipManifest, DegradationParams,
};
use hsavsr_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth gradient plus stripes and a little per-pixel jitter.
fn textured(h: usize, w: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn([3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let v = 0.5
            + 0.3 * ((x as f32 * 0.9 + c as f32).sin() * (y as f32 * 0.45).cos())
            + r.random_range(-0.1..0.1);
        v.clamp(0.0, 1.0)
    })
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn sampled_params_stay_in_range() {
    let mut r = rng(1);
    for _ in 0..10_000 {
        let p = sample_params(&mut r);
        assert!((0.2..=3.0).contains(&p.sigma));
        assert!((1.0..=5.0).contains(&p.delta));
        assert!((18..=35).contains(&p.crf.unwrap()));
        p.validate().unwrap();
    }
    let a: Vec<_> = (0..50).map({ let mut r = rng(9); move |_| sample_params(&mut r) }).collect();
    let b: Vec<_> = (0..50).map({ let mut r = rng(9); move |_| sample_params(&mut r) }).collect();
    assert_eq!(a, b);
}

#[test]
fn sample_means_match_midpoints() {
    let mut r = rng(2);
    let n = 100_000;
    let (mut s, mut d, mut c) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let p = sample_params(&mut r);
        s += p.sigma;
        d += p.delta;
        c += p.crf.unwrap() as f64;
    }
    let n = n as f64;
    for (mean, mid) in [(s / n, 1.6), (d / n, 3.0), (c / n, 26.5)] {
        assert!((mean - mid).abs() <= 0.02 * mid, "{mean} vs {mid}");
    }
}

#[test]
fn gaussian_kernel_properties() {
    let k = gaussian_kernel(0.0, Some(5)).unwrap();
    for (i, &v) in k.data().iter().enumerate() {
        assert_eq!(v, if i == 12 { 1.0 } else { 0.0 });
    }
    assert_eq!(gaussian_kernel(0.0, None).unwrap().shape(), &[1, 1]);
    assert_eq!(gaussian_kernel(1.3, None).unwrap().shape(), &[7, 7]);
    assert!(gaussian_kernel(1.0, Some(4)).is_err());
    assert!(gaussian_kernel(-1.0, None).is_err());

    for sigma in [0.2, 0.7, 1.0, 1.9, 3.0] {
        let k = gaussian_kernel(sigma, None).unwrap();
        let n = k.shape()[0];
        let sum: f64 = k.data().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() <= 1e-7, "sigma {sigma}: {sum}");
        for y in 0..n {
            for x in 0..n {
                // 90° rotation: (y, x) -> (x, n-1-y)
                assert_eq!(k.data()[y * n + x], k.data()[x * n + (n - 1 - y)]);
            }
        }
    }
}

#[test]
fn gaussian_matches_closed_form() {
    let k = gaussian_kernel(1.0, Some(5)).unwrap();
    let mut oracle = [0f64; 25];
    for y in 0..5 {
        for x in 0..5 {
            let (dx, dy) = (x as f64 - 2.0, y as f64 - 2.0);
            oracle[y * 5 + x] = (-(dx * dx + dy * dy) / 2.0).exp();
        }
    }
    let s: f64 = oracle.iter().sum();
    for (a, o) in k.data().iter().zip(oracle) {
        assert!((*a as f64 - o / s).abs() <= 1e-7);
    }
}

#[test]
fn identity_configuration_is_exact() {
    let y = textured(16, 24, 3);
    assert_eq!(degrade_frame(&y, &DegradationParams::identity(), 0).unwrap(), y);
}

#[test]
fn constants_survive_every_stage() {
    let y = Tensor::full([3, 32, 24], 0.6);
    let p = DegradationParams {
        sigma: 1.7,
        delta: 0.0,
        r: 2,
        crf: Some(35),
        seed: 4,
    };
    let x = degrade_frame(&y, &p, 0).unwrap();
    assert_eq!(x.shape(), &[3, 16, 12]);
    let first = x.data()[0];
    assert!(x.data().iter().all(|&v| v == first));
    assert!((first - 0.6).abs() <= 1e-6);
    assert_eq!(compress_standin(&Tensor::full([3, 13, 9], 0.25), 30).unwrap(), Tensor::full([3, 13, 9], 0.25));
    assert_eq!(area_downsample(&Tensor::full([1, 8, 8], 0.3), 4).unwrap(), Tensor::full([1, 2, 2], 0.3));
}

#[test]
fn noise_has_requested_spread() {
    let y = Tensor::full([3, 64, 64], 0.5);
    let p = DegradationParams { delta: 5.0, seed: 11, ..DegradationParams::identity() };
    let x = degrade_frame(&y, &p, 0).unwrap();
    let sd = mse(&x, &y).sqrt();
    assert!((sd / (5.0 / 255.0) - 1.0).abs() < 0.03, "{sd}");
}

#[test]
fn replay_is_bit_identical() {
    let y = textured(32, 32, 5);
    let p = DegradationParams { sigma: 1.1, delta: 3.0, r: 4, crf: Some(26), seed: 77 };
    let a = degrade_frame(&y, &p, 2).unwrap();
    let b = degrade_frame(&y, &p, 2).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a, degrade_frame(&y, &p, 3).unwrap());
}

#[test]
fn dct_round_trip_is_identity() {
    let mut r = rng(6);
    for _ in 0..100 {
        let mut blk = [0f64; 64];
        blk.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        let back = idct_8x8(&dct_8x8(&blk));
        for (a, b) in blk.iter().zip(back) {
            assert!((a - b).abs() <= 1e-12);
        }
        let (h, w) = (r.random_range(1..20), r.random_range(1..20));
        let f = Tensor::from_fn([2, h, w], |_| r.random_range(0.0..1.0));
        assert!(dct_quantize(&f, 0.0).unwrap().max_abs_diff(&f).unwrap() <= 1e-4);
    }
}

#[test]
fn dct_matches_direct_sum() {
    let mut r = rng(7);
    let mut blk = [0f64; 64];
    blk.iter_mut().for_each(|v| *v = r.random_range(0.0..1.0));
    let coef = dct_8x8(&blk);
    let pi = std::f64::consts::PI;
    for v in 0..8 {
        for u in 0..8 {
            let a = |k: usize| if k == 0 { (0.125f64).sqrt() } else { 0.5 };
            let mut s = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    s += blk[y * 8 + x]
                        * ((2 * x + 1) as f64 * u as f64 * pi / 16.0).cos()
                        * ((2 * y + 1) as f64 * v as f64 * pi / 16.0).cos();
                }
            }
            assert!((coef[v * 8 + u] - a(u) * a(v) * s).abs() <= 1e-12);
        }
    }
}

#[test]
fn compression_distortion_grows_with_crf() {
    let f = textured(40, 48, 8);
    let mut last = 0.0;
    for crf in 18..=35 {
        let e = mse(&compress_standin(&f, crf).unwrap(), &f);
        assert!(e >= last, "crf {crf}: {e} < {last}");
        last = e;
    }
    assert!(mse(&compress_standin(&f, 35).unwrap(), &f) > mse(&compress_standin(&f, 18).unwrap(), &f));
}

fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    10.0 * (1.0 / mse(a, b)).log10()
}

#[test]
fn sequence_contract_and_replay() {
    let frame = textured(32, 32, 9);
    let clip = vec![frame.clone(), frame.clone(), frame];
    let m = ClipManifest {
        clip_id: "c".into(),
        params: DegradationParams { sigma: 0.8, delta: 2.0, r: 2, crf: Some(22), seed: 5 },
        files: vec![],
    };
    let a = degrade_sequence(&clip, &m).unwrap();
    let b = degrade_sequence(&clip, &ClipManifest::from_kv(&m.to_kv()).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
    let quiet = ClipManifest { params: DegradationParams { delta: 0.0, ..m.params }, ..m.clone() };
    let q = degrade_sequence(&clip, &quiet).unwrap();
    assert_eq!(q[0], q[1]);
    assert!(degrade_sequence(&[], &m).is_err());

    let reference: Vec<Tensor> = clip.iter().map(|f| area_downsample(f, 2).unwrap()).collect();
    let mut last = f64::INFINITY;
    for crf in [18, 24, 30, 35] {
        let mc = ClipManifest { params: DegradationParams { crf: Some(crf), ..m.params }, ..m.clone() };
        let out = degrade_sequence(&clip, &mc).unwrap();
        let p: f64 = out.iter().zip(&reference).map(|(o, r)| psnr(o, r)).sum::<f64>() / 3.0;
        assert!(p <= last, "crf {crf}: {p} > {last}");
        last = p;
    }
}
