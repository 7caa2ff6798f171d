use std::path::PathBuf;

use hsavsr_core::engine::{
    ablate_zero_hidden, inject_hidden, pool_override, run_combine, run_sequence, HiddenTrace,
    RunOutput, TraceKind,
};
use hsavsr_core::filter_bank::FilterMode;
use hsavsr_core::hsa::summarize_attention;
use hsavsr_core::io::frame::{read_sequence, write_frame};
use hsavsr_core::io::prepare_output_dir;
use hsavsr_core::rng::substream;
use hsavsr_core::tensor::hst;
use hsavsr_core::Tensor;
use rand_distr::{Distribution, Normal};

use super::{flow_provider, load_model, run_options};
use crate::error::{CliError, CliResult};
use crate::{DumpArgs, InferArgs, LabArgs, PoolModeArg, RunArgs, TraceKindArg};

fn names(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect()
}

fn write_outputs(run: &RunArgs, paths: &[PathBuf], out: &RunOutput) -> CliResult {
    prepare_output_dir(&run.out, run.force)?;
    for (y, name) in out.outputs.iter().zip(names(paths)) {
        write_frame(y, run.out.join(name))?;
    }
    Ok(())
}

pub fn run(a: InferArgs) -> CliResult {
    let w = load_model(&a.run.model)?;
    let (paths, frames) = read_sequence(&a.run.input)?;
    let kind = a.trace.as_ref().map(|_| match a.trace_kind {
        TraceKindArg::Raw => TraceKind::Raw,
        TraceKindArg::PostHsa => TraceKind::PostHsa,
    });
    let out = run_sequence(&frames, &w, &run_options(&a.run), kind)?;
    write_outputs(&a.run, &paths, &out)?;
    if let (Some(dir), Some(trace)) = (&a.trace, &out.trace) {
        trace.save(dir, a.run.force)?;
    }
    println!("wrote {} frames to {}", out.outputs.len(), a.run.out.display());
    Ok(())
}

fn add_noise(t: &Tensor, std: f64, seed: u64) -> CliResult<Tensor> {
    if std == 0.0 {
        return Ok(t.clone());
    }
    let normal = Normal::new(0.0, std)
        .map_err(|e| CliError::Usage(format!("--noise: {e}")))?;
    let mut rng = substream(seed, "lab/inject-noise");
    let mut t = t.clone();
    for v in t.data_mut() {
        *v += normal.sample(&mut rng) as f32;
    }
    Ok(t)
}

pub fn lab(a: LabArgs) -> CliResult {
    let w = load_model(&a.run.model)?;
    let (paths, frames) = read_sequence(&a.run.input)?;
    let opts = run_options(&a.run);
    let trace = match &a.trace {
        Some(dir) => Some(HiddenTrace::load(dir)?),
        None => None,
    };
    if let Some(t) = &trace {
        if t.model_hash != w.hash() {
            eprintln!("note: trace was recorded with a different model ({})", t.model_hash);
        }
    }

    let out = if a.zero_hidden {
        ablate_zero_hidden(&frames, &w, &opts)?
    } else if a.combine {
        run_combine(&frames, &w, trace.as_ref().expect("clap requires --trace"), &opts)?
    } else if let Some(t_inject) = a.inject {
        let mut trace = trace.expect("clap requires --trace");
        if t_inject >= 1 && t_inject <= trace.len() {
            trace.states[t_inject - 1] = add_noise(&trace.states[t_inject - 1], a.noise, a.seed)?;
        }
        inject_hidden(&frames, &w, &trace, t_inject, &opts)?
    } else if let Some(mode) = a.pool_override {
        let mode = match mode {
            PoolModeArg::Blur => FilterMode::Blur,
            PoolModeArg::Sharp => FilterMode::Sharp,
        };
        pool_override(&frames, &w, mode, a.kernel_index, &opts)?
    } else {
        unreachable!("clap enforces one lab mode")
    };

    let plain = run_sequence(&frames, &w, &opts, None)?;
    write_outputs(&a.run, &paths, &out)?;
    for (t, (y, p)) in out.outputs.iter().zip(&plain.outputs).enumerate() {
        println!("frame {} l1_vs_plain {:.6e}", t + 1, y.mean_abs_diff(p)?);
    }
    Ok(())
}

pub fn attention_dump(a: DumpArgs) -> CliResult {
    let w = load_model(&a.model)?;
    let (paths, frames) = read_sequence(&a.input)?;
    let opts = hsavsr_core::engine::RunOptions {
        flow: flow_provider(a.flow),
        ..Default::default()
    };
    let out = run_sequence(&frames, &w, &opts, None)?;
    prepare_output_dir(&a.out, a.force)?;
    let bank = w.bank();
    for (path, maps) in paths.iter().zip(&out.attention) {
        let maps = maps
            .as_ref()
            .ok_or_else(|| CliError::Failed("no attention maps were produced".into()))?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let (n, h, wd) = maps.weights().chw()?;
        for (i, k) in bank.kernels().iter().enumerate().take(n) {
            let e = maps.entry(i)?;
            write_frame(&e, a.out.join(format!("{stem}_entry{i}_{}.pgm", k.name())))?;
        }
        let s = summarize_attention(maps, bank)?;
        for (name, t) in [("blurry_sum", s.blurry_sum), ("sharp_sum", s.sharp_sum), ("binary", s.binary)] {
            write_frame(&t.reshape([1, h, wd])?, a.out.join(format!("{stem}_{name}.pgm")))?;
        }
        hst::save(a.out.join(format!("{stem}_maps.hst")), maps.weights())?;
    }
    println!("wrote attention maps for {} frames to {}", out.attention.len(), a.out.display());
    Ok(())
}
