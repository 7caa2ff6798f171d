//! Hidden-state attention: a query from the current frame's shallow features
//! picks, pixel by pixel, among the filtered variants of the incoming hidden
//! state.
//!
//! Attention is per pixel and per pool entry. At pixel `p` the logit of entry
//! `i` is `<Q(:,p), K_i(:,p)> / sqrt(C)`, the weights are a softmax over the
//! `N` entries, and the output is the weighted sum of the values `V_i(:,p)`.

use std::borrow::Borrow;

use rand::Rng;

use crate::error::{Error, Result};
use crate::filter_bank::{build_pool, FilterBank, FilterMode, HiddenStatePool};
use crate::tensor::{conv2d, ConvOptions, PadMode, Real, Tensor};

/// Query, key and value projections, each a bias-free `C -> C` 3x3 conv.
/// Key and value are shared by every pool entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaWeights {
    pub query: Tensor<f32>,
    pub key: Tensor<f32>,
    pub value: Tensor<f32>,
}

/// `(C, C, 3, 3)` kernel that copies its input.
pub fn identity_kernel(c: usize) -> Tensor<f32> {
    let mut k = Tensor::zeros([c, c, 3, 3]);
    for i in 0..c {
        k.data_mut()[(i * c + i) * 9 + 4] = 1.0;
    }
    k
}

impl ScaWeights {
    pub fn identity(c: usize) -> Self {
        ScaWeights {
            query: identity_kernel(c),
            key: identity_kernel(c),
            value: identity_kernel(c),
        }
    }

    /// Near pass-through start: small random query/key (near-uniform
    /// attention) and an exact identity value projection.
    pub fn pass_through<R: Rng>(c: usize, rng: &mut R) -> Self {
        let small = |rng: &mut R| {
            Tensor::from_fn([c, c, 3, 3], |_| rng.random_range(-1.0f32..1.0) * 0.02)
        };
        ScaWeights {
            query: small(rng),
            key: small(rng),
            value: identity_kernel(c),
        }
    }

    pub fn channels(&self) -> usize {
        self.query.shape()[0]
    }

    fn check(&self, c: usize, op: &'static str) -> Result<()> {
        for k in [&self.query, &self.key, &self.value] {
            if k.shape() != [c, c, 3, 3] {
                return Err(Error::shape(op, k.shape(), &[c, c, 3, 3]));
            }
        }
        Ok(())
    }
}

fn project(x: &Tensor<f32>, k: &Tensor<f32>) -> Result<Tensor<f32>> {
    conv2d(x, k, None, ConvOptions::same(3, 3, PadMode::Zero))
}

pub fn make_query(f_s: &Tensor<f32>, w: &ScaWeights) -> Result<Tensor<f32>> {
    w.check(f_s.chw()?.0, "make_query")?;
    project(f_s, &w.query)
}

pub fn project_pool(
    pool: &HiddenStatePool<f32>,
    w: &ScaWeights,
) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
    let first = pool
        .entries()
        .first()
        .ok_or_else(|| Error::invalid("project_pool", "empty pool"))?;
    w.check(first.chw()?.0, "project_pool")?;
    let keys = pool
        .entries()
        .iter()
        .map(|e| project(e, &w.key))
        .collect::<Result<Vec<_>>>()?;
    let values = pool
        .entries()
        .iter()
        .map(|e| project(e, &w.value))
        .collect::<Result<Vec<_>>>()?;
    Ok((keys, values))
}

/// Per-pixel weights over pool entries, `(N, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T = f32> {
    weights: Tensor<T>,
}

impl<T: Real> AttentionMaps<T> {
    pub fn new(weights: Tensor<T>) -> Result<Self> {
        weights.chw()?;
        Ok(AttentionMaps { weights })
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn entries(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn entry(&self, i: usize) -> Result<Tensor<T>> {
        self.weights.slice_channels(i, i + 1)
    }
}

fn check_sca<T: Real, K: Borrow<Tensor<T>>>(q: &Tensor<T>, keys: &[K], values: &[K]) -> Result<()> {
    q.chw()?;
    if keys.is_empty() || keys.len() != values.len() {
        return Err(Error::invalid(
            "sca_aggregate",
            format!("{} keys for {} values", keys.len(), values.len()),
        ));
    }
    for t in keys.iter().chain(values) {
        q.same_shape(t.borrow(), "sca_aggregate")?;
    }
    Ok(())
}

/// Pixel-wise selective cross attention over `N` key/value pairs.
pub fn sca_aggregate<T: Real, K: Borrow<Tensor<T>>>(
    q: &Tensor<T>,
    keys: &[K],
    values: &[K],
) -> Result<(Tensor<T>, AttentionMaps<T>)> {
    check_sca(q, keys, values)?;
    let (c, h, w) = q.chw()?;
    let n = keys.len();
    let plane = h * w;
    let inv = T::one() / T::from_usize(c.max(1)).unwrap().sqrt();

    let mut logits = vec![T::zero(); n * plane];
    for (i, k) in keys.iter().enumerate() {
        let dst = &mut logits[i * plane..(i + 1) * plane];
        for ch in 0..c {
            let qs = &q.data()[ch * plane..(ch + 1) * plane];
            let ks = &k.borrow().data()[ch * plane..(ch + 1) * plane];
            for ((d, &a), &b) in dst.iter_mut().zip(qs).zip(ks) {
                *d += a * b;
            }
        }
        for d in dst.iter_mut() {
            *d = *d * inv;
        }
    }
    let weights = crate::tensor::softmax_over_axis(&Tensor::new([n, h, w], logits)?, 0)?;

    let mut out = vec![T::zero(); c * plane];
    for (i, v) in values.iter().enumerate() {
        let wi = &weights.data()[i * plane..(i + 1) * plane];
        for ch in 0..c {
            let vs = &v.borrow().data()[ch * plane..(ch + 1) * plane];
            let dst = &mut out[ch * plane..(ch + 1) * plane];
            for ((d, &a), &b) in dst.iter_mut().zip(wi).zip(vs) {
                *d += a * b;
            }
        }
    }
    let out = Tensor::new([c, h, w], out)?.ensure_finite("sca_aggregate")?;
    Ok((out, AttentionMaps { weights }))
}

/// Gradients of [`sca_aggregate`] given its forward weights.
pub(crate) fn sca_backward<T: Real>(
    q: &Tensor<T>,
    keys: &[&Tensor<T>],
    values: &[&Tensor<T>],
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>, Vec<Tensor<T>>)> {
    let (c, h, w) = q.chw()?;
    let n = keys.len();
    let plane = h * w;
    let inv = T::one() / T::from_usize(c.max(1)).unwrap().sqrt();
    let g = grad_out.data();
    let wts = weights.data();

    // d loss / d weight_i = <g, V_i>
    let mut dw = vec![T::zero(); n * plane];
    for (i, v) in values.iter().enumerate() {
        let dst = &mut dw[i * plane..(i + 1) * plane];
        for ch in 0..c {
            let vs = &v.data()[ch * plane..(ch + 1) * plane];
            let gs = &g[ch * plane..(ch + 1) * plane];
            for ((d, &a), &b) in dst.iter_mut().zip(vs).zip(gs) {
                *d += a * b;
            }
        }
    }
    // softmax backward, folded with the 1/sqrt(C) scale
    let mut dl = vec![T::zero(); n * plane];
    for p in 0..plane {
        let dot: T = (0..n).map(|i| wts[i * plane + p] * dw[i * plane + p]).sum();
        for i in 0..n {
            dl[i * plane + p] = wts[i * plane + p] * (dw[i * plane + p] - dot) * inv;
        }
    }

    let mut dq = vec![T::zero(); c * plane];
    let mut dks = Vec::with_capacity(n);
    let mut dvs = Vec::with_capacity(n);
    for i in 0..n {
        let dli = &dl[i * plane..(i + 1) * plane];
        let wi = &wts[i * plane..(i + 1) * plane];
        let mut dk = vec![T::zero(); c * plane];
        let mut dv = vec![T::zero(); c * plane];
        for ch in 0..c {
            let r = ch * plane..(ch + 1) * plane;
            let (qs, ks, gs) = (&q.data()[r.clone()], &keys[i].data()[r.clone()], &g[r.clone()]);
            for p in 0..plane {
                dq[ch * plane + p] += dli[p] * ks[p];
                dk[ch * plane + p] = dli[p] * qs[p];
                dv[ch * plane + p] = wi[p] * gs[p];
            }
        }
        dks.push(Tensor::new([c, h, w], dk)?);
        dvs.push(Tensor::new([c, h, w], dv)?);
    }
    Ok((Tensor::new([c, h, w], dq)?, dks, dvs))
}

/// `ĥ = HSA(h)`: pool, project, query, aggregate.
pub fn hsa_transform(
    h: &Tensor<f32>,
    f_s: &Tensor<f32>,
    bank: &FilterBank,
    w: &ScaWeights,
) -> Result<(Tensor<f32>, AttentionMaps<f32>)> {
    h.same_shape(f_s, "hsa_transform")?;
    let pool = build_pool(h, bank)?;
    let (keys, values) = project_pool(&pool, w)?;
    let q = make_query(f_s, w)?;
    sca_aggregate(&q, &keys, &values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSummary {
    /// Summed weight of blur entries, `(H, W)`.
    pub blurry_sum: Tensor<f32>,
    pub sharp_sum: Tensor<f32>,
    /// 1 where the blur entries outweigh the sharp ones.
    pub binary: Tensor<f32>,
}

pub fn summarize_attention(maps: &AttentionMaps<f32>, bank: &FilterBank) -> Result<AttentionSummary> {
    let (n, h, w) = maps.weights.chw()?;
    if n != bank.len() {
        return Err(Error::invalid(
            "summarize_attention",
            format!("{n} attention maps for a bank of {}", bank.len()),
        ));
    }
    let modes = bank.modes();
    for m in [FilterMode::Blur, FilterMode::Sharp] {
        if !modes.contains(&m) {
            return Err(Error::invalid(
                "summarize_attention",
                format!("bank has no {} entries", m.as_str()),
            ));
        }
    }
    let plane = h * w;
    let sum_mode = |mode: FilterMode| -> Tensor<f32> {
        let mut acc = vec![0.0f32; plane];
        for (i, _) in modes.iter().enumerate().filter(|(_, &m)| m == mode) {
            for (a, &v) in acc.iter_mut().zip(&maps.weights.data()[i * plane..(i + 1) * plane]) {
                *a += v;
            }
        }
        Tensor::new([h, w], acc).unwrap()
    };
    let blurry_sum = sum_mode(FilterMode::Blur);
    let sharp_sum = sum_mode(FilterMode::Sharp);
    let binary = blurry_sum.zip_map(&sharp_sum, |b, s| if b > s { 1.0 } else { 0.0 })?;
    Ok(AttentionSummary {
        blurry_sum,
        sharp_sum,
        binary,
    })
}
