//! Hidden-state experiments: ablation, replay from a stored trace, single-step
//! injection and single-variant pools.

use super::{run_with, HiddenTrace, ModelWeights, RunOptions, RunOutput, TraceKind};
use crate::error::{Error, Result};
use crate::filter_bank::{FilterMode, PoolOverride};
use crate::tensor::Tensor;

/// Every step sees a zero incoming hidden state.
pub fn ablate_zero_hidden(frames: &[Tensor<f32>], w: &ModelWeights, opts: &RunOptions) -> Result<RunOutput> {
    run_with(frames, w, opts, None, |_, h| Ok(Some(Tensor::zeros(h.shape()))))
}

fn check_trace(trace: &HiddenTrace, w: &ModelWeights, op: &'static str) -> Result<()> {
    if trace.kind != TraceKind::Raw {
        return Err(Error::invalid(
            op,
            "needs a raw (pre-warp) trace; post-HSA traces are for inspection only",
        ));
    }
    for s in &trace.states {
        let (c, _, _) = s.chw()?;
        if c != w.channels() {
            return Err(Error::invalid(
                op,
                format!("trace has {c} channels, model has {}", w.channels()),
            ));
        }
    }
    Ok(())
}

/// From step 2 on, the propagated state is discarded and replaced by the
/// stored one.
pub fn run_combine(
    frames: &[Tensor<f32>],
    w: &ModelWeights,
    trace: &HiddenTrace,
    opts: &RunOptions,
) -> Result<RunOutput> {
    check_trace(trace, w, "run_combine")?;
    if trace.len() != frames.len() {
        return Err(Error::invalid(
            "run_combine",
            format!("trace has {} states for {} frames", trace.len(), frames.len()),
        ));
    }
    run_with(frames, w, opts, None, |t, _| {
        Ok((t >= 2).then(|| trace.states[t - 1].clone()))
    })
}

/// Overwrites the incoming state at step `t_inject` (1-based) only.
pub fn inject_hidden(
    frames: &[Tensor<f32>],
    w: &ModelWeights,
    trace: &HiddenTrace,
    t_inject: usize,
    opts: &RunOptions,
) -> Result<RunOutput> {
    check_trace(trace, w, "inject_hidden")?;
    if t_inject == 0 || t_inject > frames.len() || t_inject > trace.len() {
        return Err(Error::invalid(
            "inject_hidden",
            format!(
                "injection step {t_inject} outside 1..={}",
                frames.len().min(trace.len())
            ),
        ));
    }
    run_with(frames, w, opts, None, |t, _| {
        Ok((t == t_inject).then(|| trace.states[t - 1].clone()))
    })
}

/// Fills every pool slot with the `index`-th variant of `mode`.
pub fn pool_override(
    frames: &[Tensor<f32>],
    w: &ModelWeights,
    mode: FilterMode,
    index: usize,
    opts: &RunOptions,
) -> Result<RunOutput> {
    if mode == FilterMode::Identity {
        return Err(Error::invalid("pool_override", "mode must be blur or sharp"));
    }
    w.bank().nth_of_mode(mode, index)?;
    let opts = RunOptions {
        pool_override: Some(PoolOverride { mode, index }),
        ..*opts
    };
    run_with(frames, w, &opts, None, |_, _| Ok(None))
}
