//! Per-stage wall-clock timing of one recurrent step.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exec::{Eager, Exec};
use super::forward;
use super::{step, ModelWeights, RecurrentState, RunOptions};
use crate::error::Result;
use crate::filter_bank::build_pool;
use crate::hsa::{make_query, project_pool, sca_aggregate};
use crate::tensor::Tensor;

/// Median seconds per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
    pub shallow: f64,
    pub pool: f64,
    pub sca: f64,
    pub rb2: f64,
    pub up: f64,
    pub step: f64,
}

impl BenchReport {
    pub fn pool_fraction(&self) -> f64 {
        self.pool / self.step
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn time<T>(iters: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    f()?; // warm-up
    let mut v = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        std::hint::black_box(f()?);
        v.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(v))
}

/// Times each stage on random `h x w` inputs and a random hidden state, then
/// a full second step (flow estimation included).
pub fn bench_step(w: &ModelWeights, h: usize, wd: usize, iterations: usize, seed: u64) -> Result<BenchReport> {
    let iterations = iterations.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = w.channels();
    let mut rand = |shape: [usize; 3], lo: f32, hi: f32| {
        Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
    };
    let x0 = rand([3, h, wd], 0.0, 1.0);
    let x1 = rand([3, h, wd], 0.0, 1.0);
    let hidden = rand([c, h, wd], -1.0, 1.0);
    let f_s = rand([c, h, wd], -1.0, 1.0);
    let sca = w.sca();
    let cfg = *w.config();
    let mut ex = Eager::new(w);

    let xv = ex.constant(x1.clone());
    let shallow = time(iterations, || forward::shallow(&mut ex, &cfg, &xv))?;
    let pool = time(iterations, || build_pool(&hidden, w.bank()))?;
    let p = build_pool(&hidden, w.bank())?;
    let sca_t = time(iterations, || {
        let (k, v) = project_pool(&p, &sca)?;
        let q = make_query(&f_s, &sca)?;
        sca_aggregate(&q, &k, &v)
    })?;
    let hv = ex.constant(hidden.clone());
    let fv = ex.constant(f_s.clone());
    let rb2 = time(iterations, || forward::fuse(&mut ex, &cfg, &hv, &fv))?;
    let up = time(iterations, || {
        let r = forward::up(&mut ex, &cfg, &hv)?;
        let b = ex.upsample(&xv, cfg.scale)?;
        ex.add(&r, &b)
    })?;

    let opts = RunOptions::default();
    let s1 = step(&RecurrentState::initial(w, h, wd), &x0, w, &opts)?.state;
    let state = s1.with_hidden(hidden.clone())?;
    let full = time(iterations, || step(&state, &x1, w, &opts))?;

    Ok(BenchReport {
        height: h,
        width: wd,
        iterations,
        shallow,
        pool,
        sca: sca_t,
        rb2,
        up,
        step: full,
    })
}
