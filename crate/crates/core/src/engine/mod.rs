//! Unidirectional recurrent super-resolution with hidden-state attention.
//!
//! Per step: shallow features from the LR frame, warp the incoming hidden
//! state onto the current frame, clean it with HSA, fuse with the shallow
//! features into the new hidden state, and reconstruct
//! `Y = UP(f_d) + bilinear(X)`, clamped to `[0, 1]`.

pub mod bench;
mod exec;
mod flow;
mod forward;
mod lab;
mod trace;
mod weights;

pub use exec::{Eager, Exec, Taped};
pub use flow::{estimate_flow, resize_flow, FlowProvider};
pub use lab::{ablate_zero_hidden, inject_hidden, pool_override, run_combine};
pub use trace::{HiddenTrace, TraceKind};
pub use weights::{bank_hash, ModelConfig, ModelWeights, FORMAT_VERSION};

pub(crate) use forward::{step_values, StepFlags};

use crate::autodiff::NodeId;
use crate::error::{Error, Result};
use crate::filter_bank::PoolOverride;
use crate::hsa::AttentionMaps;
use crate::tensor::{FlowField, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub hsa: bool,
    /// Apply HSA to the unwarped state and warp afterwards.
    pub hsa_before_warp: bool,
    pub flow: FlowProvider,
    pub pool_override: Option<PoolOverride>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            hsa: true,
            hsa_before_warp: false,
            flow: FlowProvider::default(),
            pool_override: None,
        }
    }
}

impl RunOptions {
    fn flags(&self) -> StepFlags {
        StepFlags {
            hsa: self.hsa,
            hsa_before_warp: self.hsa_before_warp,
            pool_override: self.pool_override,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    prev_frame: Option<Tensor<f32>>,
    hidden: Tensor<f32>,
    t: usize,
}

impl RecurrentState {
    /// Zero hidden state before the first frame of an `h x w` sequence.
    pub fn initial(w: &ModelWeights, h: usize, wd: usize) -> Self {
        RecurrentState {
            prev_frame: None,
            hidden: Tensor::zeros([w.channels(), h, wd]),
            t: 0,
        }
    }

    pub fn hidden(&self) -> &Tensor<f32> {
        &self.hidden
    }

    /// Number of frames consumed so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn prev_frame(&self) -> Option<&Tensor<f32>> {
        self.prev_frame.as_ref()
    }

    /// Same position in the sequence, different incoming hidden state.
    pub fn with_hidden(&self, hidden: Tensor<f32>) -> Result<Self> {
        self.hidden.same_shape(&hidden, "replace hidden state")?;
        Ok(RecurrentState {
            hidden,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Clamped `3 x rh x rw` reconstruction.
    pub output: Tensor<f32>,
    pub state: RecurrentState,
    pub attention: Option<AttentionMaps<f32>>,
    /// Hidden state fed to the fusion (after warp and HSA).
    pub consumed: Tensor<f32>,
}

fn check_frame(x: &Tensor<f32>) -> Result<(usize, usize)> {
    let (c, h, w) = x.chw()?;
    if c != 3 {
        return Err(Error::invalid("step", format!("frames must have 3 channels, got {c}")));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite { op: "step input".into() });
    }
    Ok((h, w))
}

/// Flow from the previous to the current frame at hidden-state resolution.
pub(crate) fn step_flow(
    prev: Option<&Tensor<f32>>,
    x: &Tensor<f32>,
    hidden_hw: (usize, usize),
    provider: FlowProvider,
) -> Result<FlowField> {
    let flow = match prev {
        None => {
            let (_, h, w) = x.chw()?;
            FlowField::zeros(h, w)
        }
        Some(p) => estimate_flow(p, x, provider)?,
    };
    resize_flow(&flow, hidden_hw.0, hidden_hw.1)
}

/// `f_s = RB1(conv(X))`.
pub fn extract_shallow(x: &Tensor<f32>, w: &ModelWeights) -> Result<Tensor<f32>> {
    let mut ex = Eager::new(w);
    let xv = ex.constant(x.clone());
    let f = forward::shallow(&mut ex, w.config(), &xv)?;
    Ok((*f).clone())
}

pub fn step(state: &RecurrentState, x: &Tensor<f32>, w: &ModelWeights, opts: &RunOptions) -> Result<StepOutput> {
    let mut ex = Eager::new(w);
    step_with(&mut ex, state, x, w, opts)
}

fn step_with(
    ex: &mut Eager,
    state: &RecurrentState,
    x: &Tensor<f32>,
    w: &ModelWeights,
    opts: &RunOptions,
) -> Result<StepOutput> {
    let (h, wd) = check_frame(x)?;
    if let Some(p) = &state.prev_frame {
        p.same_shape(x, "step (frame shape drift)")?;
    }
    let (hc, hh, hw) = state.hidden.chw()?;
    if hc != w.channels() || (hh, hw) != (h, wd) {
        return Err(Error::shape("step (hidden state)", state.hidden.shape(), &[w.channels(), h, wd]));
    }
    let flow = step_flow(state.prev_frame.as_ref(), x, (hh, hw), opts.flow)?;
    let xv = ex.constant(x.clone());
    let hv = ex.constant(state.hidden.clone());
    let v = step_values(ex, w.config(), w.bank(), &xv, &hv, &flow, opts.flags())?;
    Ok(StepOutput {
        output: v.output.clamp(0.0, 1.0),
        state: RecurrentState {
            prev_frame: Some(x.clone()),
            hidden: (*v.f_d).clone(),
            t: state.t + 1,
        },
        attention: v.maps,
        consumed: (*v.consumed).clone(),
    })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub outputs: Vec<Tensor<f32>>,
    pub trace: Option<HiddenTrace>,
    /// Per-frame attention weights, present when HSA ran.
    pub attention: Vec<Option<AttentionMaps<f32>>>,
}

/// Shared sequence driver. `replace(t, incoming)` may substitute the
/// incoming hidden state of step `t` (1-based) before anything else sees it.
pub(crate) fn run_with(
    frames: &[Tensor<f32>],
    w: &ModelWeights,
    opts: &RunOptions,
    record: Option<TraceKind>,
    mut replace: impl FnMut(usize, &Tensor<f32>) -> Result<Option<Tensor<f32>>>,
) -> Result<RunOutput> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("run_sequence", "empty frame sequence"))?;
    let (h, wd) = check_frame(first)?;
    for f in frames {
        first.same_shape(f, "run_sequence (non-uniform frames)")?;
    }
    let mut ex = Eager::new(w);
    let mut state = RecurrentState::initial(w, h, wd);
    let mut out = RunOutput {
        outputs: Vec::with_capacity(frames.len()),
        trace: None,
        attention: Vec::with_capacity(frames.len()),
    };
    let mut states = Vec::new();
    for (i, x) in frames.iter().enumerate() {
        if let Some(hnew) = replace(i + 1, &state.hidden)? {
            state = state.with_hidden(hnew)?;
        }
        if record == Some(TraceKind::Raw) {
            states.push(state.hidden.clone());
        }
        let s = step_with(&mut ex, &state, x, w, opts)?;
        if record == Some(TraceKind::PostHsa) {
            states.push(s.consumed);
        }
        out.outputs.push(s.output);
        out.attention.push(s.attention);
        state = s.state;
    }
    out.trace = record.map(|kind| HiddenTrace {
        kind,
        model_hash: w.hash(),
        states,
    });
    Ok(out)
}

/// Left-to-right recurrence from a zero hidden state.
pub fn run_sequence(
    frames: &[Tensor<f32>],
    w: &ModelWeights,
    opts: &RunOptions,
    record_trace: Option<TraceKind>,
) -> Result<RunOutput> {
    run_with(frames, w, opts, record_trace, |_, _| Ok(None))
}

/// Records the whole sequence on `ex` and returns the pre-clamp outputs.
/// Used by training, where the loss sees the unclamped reconstruction.
pub fn forward_sequence_taped(
    ex: &mut Taped<'_>,
    frames: &[Tensor<f32>],
    w: &ModelWeights,
    opts: &RunOptions,
) -> Result<Vec<NodeId>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("run_sequence", "empty frame sequence"))?;
    let (h, wd) = check_frame(first)?;
    let mut hidden = ex.constant(Tensor::zeros([w.channels(), h, wd]));
    let mut prev: Option<&Tensor<f32>> = None;
    let mut outs = Vec::with_capacity(frames.len());
    for x in frames {
        first.same_shape(x, "run_sequence (non-uniform frames)")?;
        let flow = step_flow(prev, x, (h, wd), opts.flow)?;
        let xv = ex.constant(x.clone());
        let v = step_values(ex, w.config(), w.bank(), &xv, &hidden, &flow, opts.flags())?;
        outs.push(v.output);
        hidden = v.f_d;
        prev = Some(x);
    }
    Ok(outs)
}
