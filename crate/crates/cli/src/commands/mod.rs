pub mod degrade;
pub mod infer;
pub mod toy;
pub mod tools;
pub mod train;

use std::path::Path;

use hsavsr_core::engine::{FlowProvider, ModelWeights, RunOptions};

use crate::error::CliResult;
use crate::{FlowArg, RunArgs};

/// Worker count from `HSAVSR_THREADS`, default 1.
pub fn threads() -> usize {
    std::env::var("HSAVSR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

pub fn flow_provider(f: FlowArg) -> FlowProvider {
    match f {
        FlowArg::Zero => FlowProvider::Zero,
        FlowArg::Block => FlowProvider::default(),
    }
}

pub fn run_options(a: &RunArgs) -> RunOptions {
    RunOptions {
        hsa: !a.no_hsa,
        hsa_before_warp: a.hsa_before_warp,
        flow: flow_provider(a.flow),
        pool_override: None,
    }
}

pub fn load_model(path: &Path) -> CliResult<ModelWeights> {
    let (w, _meta) = ModelWeights::load(path)?;
    Ok(w)
}

/// Maps `f` over `items` on up to `threads()` scoped workers, keeping order.
pub fn par_map<T: Sync, U: Send>(
    items: &[T],
    f: impl Fn(usize, &T) -> CliResult<U> + Sync,
) -> CliResult<Vec<U>> {
    let n = threads().min(items.len().max(1));
    if n <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(n);
    let f = &f;
    let parts: Vec<CliResult<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, x)| f(ci * chunk + j, x))
                        .collect::<CliResult<Vec<U>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
