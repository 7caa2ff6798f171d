//! Network stages, generic over the executor.

use super::exec::Exec;
use super::weights::ModelConfig;
use crate::error::{Error, Result};
use crate::filter_bank::{FilterBank, PoolOverride};
use crate::hsa::AttentionMaps;
use crate::tensor::FlowField;

fn conv_named<E: Exec>(ex: &mut E, x: &E::V, name: &str) -> Result<E::V> {
    let w = ex.param(&format!("{name}.weight"))?;
    let b = ex.param(&format!("{name}.bias"))?;
    ex.conv(x, &w, Some(&b))
}

/// conv → ReLU → conv, plus the identity skip.
pub(crate) fn res_block<E: Exec>(ex: &mut E, x: &E::V, prefix: &str) -> Result<E::V> {
    let a = conv_named(ex, x, &format!("{prefix}.conv1"))?;
    let a = ex.relu(&a)?;
    let a = conv_named(ex, &a, &format!("{prefix}.conv2"))?;
    ex.add(x, &a)
}

pub(crate) fn shallow<E: Exec>(ex: &mut E, cfg: &ModelConfig, x: &E::V) -> Result<E::V> {
    let c = ex.value(x).chw()?.0;
    if c != 3 {
        return Err(Error::invalid(
            "extract_shallow",
            format!("input must have 3 channels, got {c}"),
        ));
    }
    let mut f = conv_named(ex, x, "input")?;
    for i in 0..cfg.rb1_blocks {
        f = res_block(ex, &f, &format!("rb1.{i}"))?;
    }
    Ok(f)
}

/// Pool → key/value projections → query → selective cross attention.
pub(crate) fn hsa<E: Exec>(
    ex: &mut E,
    bank: &FilterBank,
    h: &E::V,
    f_s: &E::V,
    pool_override: Option<PoolOverride>,
) -> Result<(E::V, AttentionMaps<f32>)> {
    let pool: Vec<E::V> = match pool_override {
        None => bank
            .kernels()
            .iter()
            .map(|k| ex.filter(h, k))
            .collect::<Result<_>>()?,
        Some(o) => {
            let i = bank.nth_of_mode(o.mode, o.index)?;
            let v = ex.filter(h, &bank.kernels()[i])?;
            vec![v; bank.len()]
        }
    };
    let wq = ex.param("sca.query")?;
    let wk = ex.param("sca.key")?;
    let wv = ex.param("sca.value")?;
    let mut keys = Vec::with_capacity(pool.len());
    let mut values = Vec::with_capacity(pool.len());
    for p in &pool {
        keys.push(ex.conv(p, &wk, None)?);
        values.push(ex.conv(p, &wv, None)?);
    }
    let q = ex.conv(f_s, &wq, None)?;
    ex.sca(&q, &keys, &values)
}

/// `RB2(concat(ĥ, f_s))`, the new hidden state.
pub(crate) fn fuse<E: Exec>(ex: &mut E, cfg: &ModelConfig, h_hat: &E::V, f_s: &E::V) -> Result<E::V> {
    let cat = ex.concat(h_hat, f_s)?;
    let f = conv_named(ex, &cat, "fuse")?;
    let mut f = ex.relu(&f)?;
    for i in 0..cfg.rb2_blocks {
        f = res_block(ex, &f, &format!("rb2.{i}"))?;
    }
    Ok(f)
}

/// `UP(f_d)`: conv → shuffle ×2 → ReLU per stage, then the output conv.
pub(crate) fn up<E: Exec>(ex: &mut E, cfg: &ModelConfig, f_d: &E::V) -> Result<E::V> {
    let mut f = f_d.clone();
    for s in 0..cfg.up_stages() {
        f = conv_named(ex, &f, &format!("up.{s}"))?;
        f = ex.pixel_shuffle(&f, 2)?;
        f = ex.relu(&f)?;
    }
    conv_named(ex, &f, "out")
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StepFlags {
    pub hsa: bool,
    pub hsa_before_warp: bool,
    pub pool_override: Option<PoolOverride>,
}

pub(crate) struct StepValues<V> {
    /// Hidden state as fed to the fusion (after warp and HSA).
    pub consumed: V,
    pub f_d: V,
    /// Reconstruction before the final clamp.
    pub output: V,
    pub maps: Option<AttentionMaps<f32>>,
}

/// One recurrent step with an already-estimated flow.
pub(crate) fn step_values<E: Exec>(
    ex: &mut E,
    cfg: &ModelConfig,
    bank: &FilterBank,
    x: &E::V,
    hidden: &E::V,
    flow: &FlowField,
    flags: StepFlags,
) -> Result<StepValues<E::V>> {
    let f_s = shallow(ex, cfg, x)?;
    let mut maps = None;
    let mut h = hidden.clone();
    let mut attend = |ex: &mut E, h: &E::V| -> Result<E::V> {
        if !flags.hsa {
            return Ok(h.clone());
        }
        let (out, m) = hsa(ex, bank, h, &f_s, flags.pool_override)?;
        maps = Some(m);
        Ok(out)
    };
    if flags.hsa_before_warp {
        h = attend(ex, &h)?;
        h = ex.warp(&h, flow)?;
    } else {
        h = ex.warp(&h, flow)?;
        h = attend(ex, &h)?;
    }
    let f_d = fuse(ex, cfg, &h, &f_s)?;
    let residual = up(ex, cfg, &f_d)?;
    let base = ex.upsample(x, cfg.scale)?;
    let output = ex.add(&residual, &base)?;
    Ok(StepValues {
        consumed: h,
        f_d,
        output,
        maps,
    })
}
