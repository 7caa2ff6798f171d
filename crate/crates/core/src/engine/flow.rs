//! Stand-in motion estimation between consecutive LR frames.
//!
//! Flow convention: `cur(p) ≈ prev(p + flow(p))`, so warping the previous
//! hidden state with `backward_warp(h, flow)` aligns it with the current frame.

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, FlowField, ResizeScale, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowProvider {
    Zero,
    /// Exhaustive integer block matching under the sum of absolute differences.
    Block { block: usize, radius: usize },
}

impl Default for FlowProvider {
    fn default() -> Self {
        FlowProvider::Block {
            block: 4,
            radius: 3,
        }
    }
}

impl FlowProvider {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(FlowProvider::Zero),
            "block" => Ok(FlowProvider::default()),
            other => Err(Error::invalid(
                "estimate_flow",
                format!("unknown flow provider `{other}` (expected zero or block)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowProvider::Zero => "zero",
            FlowProvider::Block { .. } => "block",
        }
    }

    pub fn radius(&self) -> usize {
        match *self {
            FlowProvider::Zero => 0,
            FlowProvider::Block { radius, .. } => radius,
        }
    }
}

pub fn estimate_flow(prev: &Tensor<f32>, cur: &Tensor<f32>, provider: FlowProvider) -> Result<FlowField> {
    prev.same_shape(cur, "estimate_flow")?;
    let (c, h, w) = cur.chw()?;
    match provider {
        FlowProvider::Zero => Ok(FlowField::zeros(h, w)),
        FlowProvider::Block { block, radius } => {
            if block == 0 {
                return Err(Error::invalid("estimate_flow", "block size must be positive"));
            }
            Ok(block_match(prev.data(), cur.data(), c, h, w, block, radius as isize))
        }
    }
}

fn block_match(
    prev: &[f32],
    cur: &[f32],
    c: usize,
    h: usize,
    w: usize,
    block: usize,
    radius: isize,
) -> FlowField {
    let mut flow = Tensor::zeros([2, h, w]);
    let plane = h * w;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    // Candidates sorted by |dx| + |dy|, then scan order, so ties resolve to
    // the smallest displacement.
    let mut cands: Vec<(isize, isize)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .collect();
    cands.sort_by_key(|&(dx, dy)| dx.abs() + dy.abs());

    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (ye, xe) = ((by + block).min(h), (bx + block).min(w));
            let mut best = (f64::INFINITY, 0isize, 0isize);
            for &(dx, dy) in &cands {
                let mut sad = 0.0f64;
                for ch in 0..c {
                    for y in by..ye {
                        let sy = clamp(y as isize + dy, h);
                        for x in bx..xe {
                            let sx = clamp(x as isize + dx, w);
                            let a = cur[ch * plane + y * w + x];
                            let b = prev[ch * plane + sy * w + sx];
                            sad += (a - b).abs() as f64;
                        }
                    }
                }
                if sad < best.0 {
                    best = (sad, dx, dy);
                }
            }
            let d = flow.data_mut();
            for y in by..ye {
                for x in bx..xe {
                    d[y * w + x] = best.1 as f32;
                    d[plane + y * w + x] = best.2 as f32;
                }
            }
        }
    }
    FlowField::new(flow).expect("finite integer flow")
}

/// Resamples a flow field to `(h, w)`, scaling displacements with the grid.
pub fn resize_flow(flow: &FlowField, h: usize, w: usize) -> Result<FlowField> {
    let (fh, fw) = (flow.height(), flow.width());
    if (fh, fw) == (h, w) {
        return Ok(flow.clone());
    }
    if h * fw != w * fh {
        return Err(Error::invalid(
            "resize_flow",
            format!("aspect mismatch: flow {fh}x{fw}, target {h}x{w}"),
        ));
    }
    let scale = ResizeScale { num: h, den: fh };
    let ratio = h as f32 / fh as f32;
    let resized = bilinear_resize(flow.as_tensor(), scale)?.scale(ratio);
    FlowField::new(resized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    /// `cur(x, y) = prev(x + dx, y + dy)` inside the frame.
    fn translated(prev: &Tensor<f32>, dx: isize, dy: isize) -> Tensor<f32> {
        let (c, h, w) = prev.chw().unwrap();
        Tensor::from_fn([c, h, w], |i| {
            let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
            let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            prev[[ch, sy, sx]]
        })
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = random_tensor(&[3, 16, 16], 1);
        let flow = estimate_flow(&f, &f, FlowProvider::default()).unwrap();
        assert!(flow.is_zero());
    }

    #[test]
    fn recovers_translation_on_interior_blocks() {
        let prev = random_tensor(&[3, 24, 24], 2);
        let cur = translated(&prev, 2, 0);
        let flow = estimate_flow(&prev, &cur, FlowProvider::default()).unwrap();
        for y in 4..20 {
            for x in 4..20 {
                assert_eq!(flow.dx()[y * 24 + x], 2.0, "({x},{y})");
                assert_eq!(flow.dy()[y * 24 + x], 0.0);
            }
        }
        assert!(flow.max_abs() <= 3.0);
    }

    #[test]
    fn zero_provider_ignores_content() {
        let a = random_tensor(&[3, 8, 8], 3);
        let b = random_tensor(&[3, 8, 8], 4);
        assert!(estimate_flow(&a, &b, FlowProvider::Zero).unwrap().is_zero());
    }

    #[test]
    fn errors() {
        assert!(FlowProvider::parse("spynet").is_err());
        let a = random_tensor(&[3, 8, 8], 3);
        let b = random_tensor(&[3, 8, 9], 4);
        assert!(estimate_flow(&a, &b, FlowProvider::Zero).is_err());
    }

    #[test]
    fn resize_scales_displacement() {
        let f = FlowField::uniform(4, 4, 1.0, -0.5);
        let r = resize_flow(&f, 8, 8).unwrap();
        assert!(r.dx().iter().all(|&v| v == 2.0));
        assert!(r.dy().iter().all(|&v| v == -1.0));
    }
}
