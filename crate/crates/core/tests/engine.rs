use hsavsr_core::engine::{
    ablate_zero_hidden, bench::bench_step, estimate_flow, extract_shallow, inject_hidden,
    pool_override, run_combine, run_sequence, step, FlowProvider, HiddenTrace, ModelConfig,
    ModelWeights, RecurrentState, RunOptions, TraceKind,
};
use hsavsr_core::filter_bank::{default_bank, FilterMode};
use hsavsr_core::hsa::hsa_transform;
use hsavsr_core::io::kv::KeyValues;
use hsavsr_core::tensor::{
    backward_warp, bilinear_resize, concat_channels, conv2d, pixel_shuffle, ConvOptions, PadMode,
    ResizeScale,
};
use hsavsr_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        channels: 4,
        scale: 4,
        rb1_blocks: 1,
        rb2_blocks: 2,
    }
}

fn rand_t(shape: &[usize], seed: u64, lo: f32, hi: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Random weights including a non-identity value projection.
fn weights(seed: u64) -> ModelWeights {
    let mut w = ModelWeights::init(tiny(), default_bank(), seed).unwrap();
    let v = rand_t(&[4, 4, 3, 3], seed + 100, -0.2, 0.2);
    let v = v.add(w.get("sca.value").unwrap()).unwrap();
    w.set("sca.value", v).unwrap();
    let q = rand_t(&[4, 4, 3, 3], seed + 200, -0.5, 0.5);
    w.set("sca.query", q).unwrap();
    w
}

/// Windows sliding one pixel right per frame over a random canvas.
fn frames(n: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor> {
    let cw = w + n;
    let canvas = rand_t(&[3, h, cw], seed, 0.0, 1.0);
    (0..n)
        .map(|t| {
            Tensor::from_fn([3, h, w], |i| {
                let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
                canvas[[c, y, x + t]]
            })
        })
        .collect()
}

fn same3() -> ConvOptions {
    ConvOptions::same(3, 3, PadMode::Zero)
}

fn conv(w: &ModelWeights, x: &Tensor, name: &str) -> Tensor {
    conv2d(
        x,
        w.get(&format!("{name}.weight")).unwrap(),
        Some(w.get(&format!("{name}.bias")).unwrap()),
        same3(),
    )
    .unwrap()
}

fn block(w: &ModelWeights, x: &Tensor, p: &str) -> Tensor {
    let a = conv(w, x, &format!("{p}.conv1")).map(|v| v.max(0.0));
    x.add(&conv(w, &a, &format!("{p}.conv2"))).unwrap()
}

#[test]
fn shallow_matches_conv_composition() {
    let w = weights(1);
    let x = rand_t(&[3, 8, 10], 2, 0.0, 1.0);
    let oracle = block(&w, &conv(&w, &x, "input"), "rb1.0");
    let got = extract_shallow(&x, &w).unwrap();
    assert_eq!(got.shape(), &[4, 8, 10]);
    assert!(got.max_abs_diff(&oracle).unwrap() <= 1e-6);
}

#[test]
fn shallow_with_zero_blocks_is_input_conv() {
    let mut w = weights(1);
    for n in ["rb1.0.conv1.weight", "rb1.0.conv1.bias", "rb1.0.conv2.weight", "rb1.0.conv2.bias"] {
        let z = Tensor::zeros(w.get(n).unwrap().shape());
        w.set(n, z).unwrap();
    }
    let x = rand_t(&[3, 6, 6], 2, 0.0, 1.0);
    assert_eq!(extract_shallow(&x, &w).unwrap(), conv(&w, &x, "input"));
    assert!(extract_shallow(&rand_t(&[1, 6, 6], 2, 0.0, 1.0), &w).is_err());
}

#[test]
fn first_step_on_grey_frame() {
    let w = ModelWeights::init(tiny(), default_bank(), 0).unwrap();
    let x = Tensor::full([3, 6, 5], 0.5);
    let s = step(&RecurrentState::initial(&w, 6, 5), &x, &w, &RunOptions::default()).unwrap();
    assert_eq!(s.output.shape(), &[3, 24, 20]);
    assert!(s.output.is_finite());
    assert!(s.output.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(s.state.t(), 1);
    assert_eq!(s.state.hidden().shape(), &[4, 6, 5]);
}

#[test]
fn hsa_is_a_no_op_on_constant_hidden_state() {
    let w = ModelWeights::init(tiny(), default_bank(), 5).unwrap();
    let x = rand_t(&[3, 8, 8], 3, 0.0, 1.0);
    let st = RecurrentState::initial(&w, 8, 8)
        .with_hidden(Tensor::full([4, 8, 8], 0.37))
        .unwrap();
    let on = step(&st, &x, &w, &RunOptions::default()).unwrap();
    let off = step(&st, &x, &w, &RunOptions { hsa: false, ..RunOptions::default() }).unwrap();
    assert!(on.output.max_abs_diff(&off.output).unwrap() <= 1e-5);
    assert!(on.attention.is_some() && off.attention.is_none());
}

#[test]
fn step_matches_manual_composition() {
    let w = weights(7);
    let cfg = *w.config();
    let seq = frames(2, 12, 12, 9);
    let opts = RunOptions::default();
    let s1 = step(&RecurrentState::initial(&w, 12, 12), &seq[0], &w, &opts).unwrap();
    let hidden = rand_t(&[4, 12, 12], 11, -1.0, 1.0);
    let st = s1.state.with_hidden(hidden.clone()).unwrap();
    let got = step(&st, &seq[1], &w, &opts).unwrap();

    // 1 shallow, 2 flow + warp, 3 HSA, 4 fusion, 5 UP, 6 bilinear skip + clamp
    let f_s = block(&w, &conv(&w, &seq[1], "input"), "rb1.0");
    let flow = estimate_flow(&seq[0], &seq[1], opts.flow).unwrap();
    assert!(!flow.is_zero());
    let warped = backward_warp(&hidden, &flow).unwrap();
    let (h_hat, _) = hsa_transform(&warped, &f_s, w.bank(), &w.sca()).unwrap();
    let mut f = conv(&w, &concat_channels(&h_hat, &f_s).unwrap(), "fuse").map(|v| v.max(0.0));
    for i in 0..cfg.rb2_blocks {
        f = block(&w, &f, &format!("rb2.{i}"));
    }
    let f_d = f.clone();
    for s in 0..cfg.up_stages() {
        f = pixel_shuffle(&conv(&w, &f, &format!("up.{s}")), 2)
            .unwrap()
            .map(|v| v.max(0.0));
    }
    let y = conv(&w, &f, "out")
        .add(&bilinear_resize(&seq[1], ResizeScale::int(4)).unwrap())
        .unwrap()
        .clamp(0.0, 1.0);

    assert!(got.output.max_abs_diff(&y).unwrap() <= 1e-5);
    assert!(got.state.hidden().max_abs_diff(&f_d).unwrap() <= 1e-5);
    assert!(got.consumed.max_abs_diff(&h_hat).unwrap() <= 1e-5);
}

#[test]
fn warp_order_flag_changes_composition() {
    let w = weights(7);
    let seq = frames(3, 12, 12, 9);
    let a = run_sequence(&seq, &w, &RunOptions::default(), None).unwrap();
    let b = run_sequence(
        &seq,
        &w,
        &RunOptions { hsa_before_warp: true, ..RunOptions::default() },
        None,
    )
    .unwrap();
    assert_eq!(a.outputs[0], b.outputs[0]);
    assert!(a.outputs[2].max_abs_diff(&b.outputs[2]).unwrap() > 0.0);
}

#[test]
fn sequence_contracts() {
    let w = weights(3);
    let seq = frames(4, 10, 12, 1);
    let opts = RunOptions::default();
    let one = run_sequence(&seq[..1], &w, &opts, None).unwrap();
    let s = step(&RecurrentState::initial(&w, 10, 12), &seq[0], &w, &opts).unwrap();
    assert_eq!(one.outputs[0], s.output);

    let a = run_sequence(&seq, &w, &opts, Some(TraceKind::Raw)).unwrap();
    let b = run_sequence(&seq, &w, &opts, Some(TraceKind::Raw)).unwrap();
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.trace, b.trace);
    let tr = a.trace.unwrap();
    assert_eq!(tr.len(), 4);
    assert!(tr.states[0].data().iter().all(|&v| v == 0.0));
    assert_eq!(tr.model_hash, w.hash());
    for y in &a.outputs {
        assert_eq!(y.shape(), &[3, 40, 48]);
    }
    let post = run_sequence(&seq, &w, &opts, Some(TraceKind::PostHsa)).unwrap();
    assert_eq!(post.trace.unwrap().len(), 4);

    assert!(run_sequence(&[], &w, &opts, None).is_err());
    let mut bad = seq.clone();
    bad.push(rand_t(&[3, 10, 10], 1, 0.0, 1.0));
    assert!(run_sequence(&bad, &w, &opts, None).is_err());
    let drift = step(&s.state, &rand_t(&[3, 10, 10], 1, 0.0, 1.0), &w, &opts);
    assert!(drift.is_err());
}

#[test]
fn lab_plumbing_identities() {
    let w = weights(4);
    let seq = frames(4, 10, 10, 2);
    let opts = RunOptions::default();
    let plain = run_sequence(&seq, &w, &opts, Some(TraceKind::Raw)).unwrap();
    let trace = plain.trace.clone().unwrap();
    let zero = ablate_zero_hidden(&seq, &w, &opts).unwrap();

    let combine_self = run_combine(&seq, &w, &trace, &opts).unwrap();
    assert_eq!(combine_self.outputs, plain.outputs);
    let combine_zero = run_combine(&seq, &w, &trace.zeros_like(), &opts).unwrap();
    assert_eq!(combine_zero.outputs, zero.outputs);
    assert_eq!(zero.outputs[0], plain.outputs[0]);
    for t in 1..4 {
        assert!(zero.outputs[t].mean_abs_diff(&plain.outputs[t]).unwrap() > 0.0);
    }
    let again = ablate_zero_hidden(&seq, &w, &opts).unwrap();
    assert_eq!(again.outputs, zero.outputs);

    let own = inject_hidden(&seq, &w, &trace, 3, &opts).unwrap();
    assert_eq!(own.outputs, plain.outputs);
    let inj_zero = inject_hidden(&seq, &w, &trace.zeros_like(), 3, &opts).unwrap();
    assert_eq!(inj_zero.outputs[2], zero.outputs[2]);
    assert_eq!(inj_zero.outputs[1], plain.outputs[1]);

    let other = weights(99);
    let foreign = run_sequence(&seq, &other, &opts, Some(TraceKind::Raw)).unwrap();
    let mixed = run_combine(&seq, &w, foreign.trace.as_ref().unwrap(), &opts).unwrap();
    assert_eq!(mixed.outputs[0], plain.outputs[0]);
    assert!(mixed.outputs[1].mean_abs_diff(&plain.outputs[1]).unwrap() > 0.0);
}

#[test]
fn lab_errors() {
    let w = weights(4);
    let seq = frames(3, 8, 8, 2);
    let opts = RunOptions::default();
    let trace = run_sequence(&seq, &w, &opts, Some(TraceKind::Raw)).unwrap().trace.unwrap();
    assert!(run_combine(&seq[..2], &w, &trace, &opts).is_err());
    assert!(inject_hidden(&seq, &w, &trace, 0, &opts).is_err());
    assert!(inject_hidden(&seq, &w, &trace, 4, &opts).is_err());
    let post = run_sequence(&seq, &w, &opts, Some(TraceKind::PostHsa)).unwrap().trace.unwrap();
    assert!(run_combine(&seq, &w, &post, &opts).is_err());
    assert!(pool_override(&seq, &w, FilterMode::Sharp, 2, &opts).is_err());
    assert!(pool_override(&seq, &w, FilterMode::Identity, 0, &opts).is_err());
    assert!(pool_override(&seq, &w, FilterMode::Blur, 2, &opts).is_ok());
}

#[test]
fn pool_override_effects() {
    let w = weights(6);
    let seq = frames(3, 10, 10, 5);
    let opts = RunOptions::default();
    let blur = pool_override(&seq, &w, FilterMode::Blur, 0, &opts).unwrap();
    let sharp = pool_override(&seq, &w, FilterMode::Sharp, 0, &opts).unwrap();
    assert_eq!(blur.outputs[0], sharp.outputs[0]);
    assert!(blur.outputs[2].mean_abs_diff(&sharp.outputs[2]).unwrap() > 0.0);

    // Centre-tap-only kernels keep constant frames constant through every
    // conv, so all pool variants coincide.
    let mut wc = w.clone();
    let names: Vec<String> = wc.params().keys().filter(|n| n.ends_with("weight") || n.starts_with("sca.")).cloned().collect();
    for n in names {
        let t = wc.get(&n).unwrap().clone();
        let centred = Tensor::from_fn(t.shape().to_vec(), |i| if i % 9 == 4 { t.data()[i] } else { 0.0 });
        wc.set(&n, centred).unwrap();
    }
    let flat = vec![Tensor::full([3, 8, 8], 0.4); 3];
    let b = pool_override(&flat, &wc, FilterMode::Blur, 1, &opts).unwrap();
    let s = pool_override(&flat, &wc, FilterMode::Sharp, 1, &opts).unwrap();
    for (x, y) in b.outputs.iter().zip(&s.outputs) {
        assert!(x.max_abs_diff(y).unwrap() <= 1e-6);
    }
}

#[test]
fn trace_and_bundle_files() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(8);
    let seq = frames(3, 8, 8, 1);
    let opts = RunOptions { flow: FlowProvider::Zero, ..RunOptions::default() };
    let plain = run_sequence(&seq, &w, &opts, Some(TraceKind::Raw)).unwrap();
    let tdir = dir.path().join("trace");
    plain.trace.as_ref().unwrap().save(&tdir, false).unwrap();
    let loaded = HiddenTrace::load(&tdir).unwrap();
    assert_eq!(run_combine(&seq, &w, &loaded, &opts).unwrap().outputs, plain.outputs);

    let path = dir.path().join("m.hsb");
    w.save(&path, &KeyValues::new()).unwrap();
    let (back, _) = ModelWeights::load(&path).unwrap();
    assert_eq!(back.hash(), w.hash());
    assert_eq!(run_sequence(&seq, &back, &opts, None).unwrap().outputs, plain.outputs);
}

#[test]
fn bench_reports_every_stage() {
    let w = ModelWeights::init(tiny(), default_bank(), 0).unwrap();
    let r = bench_step(&w, 16, 16, 2, 1).unwrap();
    for v in [r.shallow, r.pool, r.sca, r.rb2, r.up, r.step] {
        assert!(v > 0.0);
    }
    assert!(r.pool_fraction() > 0.0);
}
