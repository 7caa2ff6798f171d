//! Shared helpers and brute-force oracles for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0f32..1.0))
}

/// Per-channel filtering, replicate border, in `f64`.
pub fn nested_depthwise_replicate(h: &Tensor<f32>, k: &Tensor<f32>) -> Tensor<f64> {
    let (c, hh, ww) = h.chw().unwrap();
    let (kh, kw) = (k.shape()[0], k.shape()[1]);
    let mut out = Tensor::<f64>::zeros([c, hh, ww]);
    for ch in 0..c {
        for y in 0..hh {
            for x in 0..ww {
                let mut acc = 0.0f64;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let sy = (y as isize + ky as isize - (kh / 2) as isize).clamp(0, hh as isize - 1) as usize;
                        let sx = (x as isize + kx as isize - (kw / 2) as isize).clamp(0, ww as isize - 1) as usize;
                        acc += k.data()[ky * kw + kx] as f64 * h[[ch, sy, sx]] as f64;
                    }
                }
                out.data_mut()[(ch * hh + y) * ww + x] = acc;
            }
        }
    }
    out
}
