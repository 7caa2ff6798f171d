//! Finite-difference checks of every differentiable primitive on random
//! small shapes, run in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheck, NodeId, Tape};
use crate::error::Result;
use crate::tensor::{ConvOptions, FlowField, PadMode, ResizeScale, Tensor};

pub const EPSILON: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub primitive: &'static str,
    pub shape: String,
    pub report: GradCheck,
}

pub const PRIMITIVES: [&str; 8] = [
    "conv2d",
    "softmax",
    "bilinear_resize",
    "pixel_shuffle",
    "warp",
    "residual_block",
    "sca_aggregate",
    "l1_loss",
];

fn rand64(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0) * scale)
}

/// `sum(out · probe)` so every output coordinate carries a distinct weight.
fn project(t: &mut Tape<f64>, out: NodeId, probe: &Tensor<f64>) -> Result<NodeId> {
    let p = t.constant(probe.clone());
    let m = t.mul(out, p)?;
    t.sum(m)
}

fn case(
    primitive: &'static str,
    shape: String,
    report: Result<GradCheck>,
) -> Result<SuiteCase> {
    Ok(SuiteCase {
        primitive,
        shape,
        report: report?,
    })
}

/// Runs `per_primitive` random shapes for each entry of [`PRIMITIVES`].
pub fn gradient_suite(seed: u64, per_primitive: usize) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..per_primitive {
        // conv2d
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(3..7), rng.random_range(3..7));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let mode = if rng.random_bool(0.5) { PadMode::Zero } else { PadMode::Replicate };
        let opts = ConvOptions::same(k, k, mode);
        let x = rand64(&mut rng, &[ci, h, w], 1.0);
        let kw = rand64(&mut rng, &[co, ci, k, k], 0.5);
        let b = rand64(&mut rng, &[co], 0.5);
        let probe = rand64(&mut rng, &[co, h, w], 1.0);
        out.push(case(
            "conv2d",
            format!("x {ci}x{h}x{w}, k {co}x{ci}x{k}x{k}"),
            grad_check(
                |t, l| {
                    let y = t.conv2d(l[0], l[1], Some(l[2]), opts)?;
                    project(t, y, &probe)
                },
                &[("x", x), ("k", kw), ("b", b)],
                EPSILON,
            ),
        )?);

        // softmax along a random axis
        let shape = [rng.random_range(2..6), rng.random_range(1..5), rng.random_range(1..5)];
        let axis = rng.random_range(0..3);
        let x = rand64(&mut rng, &shape, 2.0);
        let probe = rand64(&mut rng, &shape, 1.0);
        out.push(case(
            "softmax",
            format!("{shape:?} axis {axis}"),
            grad_check(
                |t, l| {
                    let y = t.softmax(l[0], axis)?;
                    project(t, y, &probe)
                },
                &[("x", x)],
                EPSILON,
            ),
        )?);

        // bilinear resize, integer and fractional factors
        let scale = [ResizeScale::int(2), ResizeScale::int(4), ResizeScale { num: 3, den: 2 }]
            [rng.random_range(0..3)];
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(2..6), rng.random_range(2..6));
        let x = rand64(&mut rng, &[c, h, w], 1.0);
        let (ho, wo) = (h * scale.num / scale.den, w * scale.num / scale.den);
        let probe = rand64(&mut rng, &[c, ho, wo], 1.0);
        out.push(case(
            "bilinear_resize",
            format!("{c}x{h}x{w} x{}/{}", scale.num, scale.den),
            grad_check(
                |t, l| {
                    let y = t.bilinear_resize(l[0], scale)?;
                    project(t, y, &probe)
                },
                &[("x", x)],
                EPSILON,
            ),
        )?);

        // pixel shuffle
        let r = rng.random_range(2..4);
        let (c, h, w) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let x = rand64(&mut rng, &[c * r * r, h, w], 1.0);
        let probe = rand64(&mut rng, &[c, h * r, w * r], 1.0);
        out.push(case(
            "pixel_shuffle",
            format!("{}x{h}x{w} r {r}", c * r * r),
            grad_check(
                |t, l| {
                    let y = t.pixel_shuffle(l[0], r)?;
                    project(t, y, &probe)
                },
                &[("x", x)],
                EPSILON,
            ),
        )?);

        // warp with respect to its input, non-integer flow
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(3..7), rng.random_range(3..7));
        let x = rand64(&mut rng, &[c, h, w], 1.0);
        let flow = FlowField::new(Tensor::from_fn([2, h, w], |_| {
            let v: f32 = rng.random_range(-2.5..2.5);
            // keep samples away from integer positions, where the gradient has kinks
            if (v - v.round()).abs() < 0.05 { v + 0.1 } else { v }
        }))?;
        let probe = rand64(&mut rng, &[c, h, w], 1.0);
        out.push(case(
            "warp",
            format!("{c}x{h}x{w}"),
            grad_check(
                |t, l| {
                    let y = t.warp(l[0], &flow)?;
                    project(t, y, &probe)
                },
                &[("x", x)],
                EPSILON,
            ),
        )?);

        // residual block: conv → ReLU → conv + skip
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(3..6), rng.random_range(3..6));
        let opts = ConvOptions::same(3, 3, PadMode::Zero);
        let x = rand64(&mut rng, &[c, h, w], 1.0);
        let w1 = rand64(&mut rng, &[c, c, 3, 3], 0.4);
        let b1 = rand64(&mut rng, &[c], 0.2);
        let w2 = rand64(&mut rng, &[c, c, 3, 3], 0.4);
        let b2 = rand64(&mut rng, &[c], 0.2);
        let probe = rand64(&mut rng, &[c, h, w], 1.0);
        out.push(case(
            "residual_block",
            format!("{c}x{h}x{w}"),
            grad_check(
                |t, l| {
                    let a = t.conv2d(l[0], l[1], Some(l[2]), opts)?;
                    let a = t.relu(a)?;
                    let a = t.conv2d(a, l[3], Some(l[4]), opts)?;
                    let y = t.add(l[0], a)?;
                    project(t, y, &probe)
                },
                &[("x", x), ("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)],
                EPSILON,
            ),
        )?);

        // selective cross attention over N entries
        let n = rng.random_range(2..6);
        let (c, h, w) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..4));
        let mut leaves = vec![("q".to_string(), rand64(&mut rng, &[c, h, w], 1.0))];
        for i in 0..n {
            leaves.push((format!("k{i}"), rand64(&mut rng, &[c, h, w], 1.0)));
        }
        for i in 0..n {
            leaves.push((format!("v{i}"), rand64(&mut rng, &[c, h, w], 1.0)));
        }
        let named: Vec<(&str, Tensor<f64>)> =
            leaves.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        let probe = rand64(&mut rng, &[c, h, w], 1.0);
        out.push(case(
            "sca_aggregate",
            format!("N {n}, {c}x{h}x{w}"),
            grad_check(
                |t, l| {
                    let (y, _) = t.sca(l[0], &l[1..=n], &l[n + 1..])?;
                    project(t, y, &probe)
                },
                &named,
                EPSILON,
            ),
        )?);

        // L1 loss against a target, both sides differentiable
        let shape = [rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5)];
        let p = rand64(&mut rng, &shape, 1.0);
        let g = rand64(&mut rng, &shape, 1.0);
        out.push(case(
            "l1_loss",
            format!("{shape:?}"),
            grad_check(|t, l| t.l1_loss(l[0], l[1]), &[("pred", p), ("target", g)], EPSILON),
        )?);
    }
    Ok(out)
}
