//! Synthetic LR generation: blur, additive noise, area downsampling and a
//! block-DCT compression stand-in, in that order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::kv::KeyValues;
use crate::tensor::{depthwise_conv2d, PadMode, Tensor};

pub const SIGMA_RANGE: (f64, f64) = (0.2, 3.0);
pub const DELTA_RANGE: (f64, f64) = (1.0, 5.0);
pub const CRF_RANGE: (u32, u32) = (18, 35);

/// One clip's degradation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationParams {
    /// Gaussian blur standard deviation in HR pixels.
    pub sigma: f64,
    /// Noise standard deviation on the 0..255 scale.
    pub delta: f64,
    pub r: usize,
    /// `None` disables the compression stage.
    pub crf: Option<u32>,
    /// Root of the per-frame noise streams.
    pub seed: u64,
}

impl DegradationParams {
    pub fn identity() -> Self {
        DegradationParams {
            sigma: 0.0,
            delta: 0.0,
            r: 1,
            crf: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("degrade", format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("degrade", format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.r == 0 {
            return Err(Error::invalid("degrade", "r must be at least 1"));
        }
        if let Some(crf) = self.crf {
            check_crf(crf)?;
        }
        Ok(())
    }
}

fn check_crf(crf: u32) -> Result<()> {
    if !(CRF_RANGE.0..=CRF_RANGE.1).contains(&crf) {
        return Err(Error::invalid(
            "compress",
            format!("crf must be in {}..={}, got {crf}", CRF_RANGE.0, CRF_RANGE.1),
        ));
    }
    Ok(())
}

/// Uniform draw from the sampling ranges, downsampling factor 4.
pub fn sample_params<R: Rng>(rng: &mut R) -> DegradationParams {
    DegradationParams {
        sigma: rng.random_range(SIGMA_RANGE.0..=SIGMA_RANGE.1),
        delta: rng.random_range(DELTA_RANGE.0..=DELTA_RANGE.1),
        r: 4,
        crf: Some(rng.random_range(CRF_RANGE.0..=CRF_RANGE.1)),
        seed: rng.random(),
    }
}

pub fn default_kernel_size(sigma: f64) -> usize {
    2 * (2.0 * sigma).ceil() as usize + 1
}

/// Normalized `size x size` Gaussian; `sigma = 0` gives the discrete delta.
pub fn gaussian_kernel(sigma: f64, size: Option<usize>) -> Result<Tensor<f32>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("gaussian_kernel", format!("sigma must be >= 0, got {sigma}")));
    }
    let size = size.unwrap_or_else(|| default_kernel_size(sigma));
    if size % 2 == 0 {
        return Err(Error::invalid("gaussian_kernel", format!("size must be odd, got {size}")));
    }
    let c = (size / 2) as f64;
    let mut k = vec![0f64; size * size];
    if sigma == 0.0 {
        k[size * size / 2] = 1.0;
    } else {
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - c, y as f64 - c);
                k[y * size + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new([size, size], k.into_iter().map(|v| v as f32).collect())
}

/// Mean over non-overlapping `r x r` blocks.
pub fn area_downsample(x: &Tensor<f32>, r: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = x.chw()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::invalid(
            "degrade",
            format!("{h}x{w} is not divisible by r = {r}"),
        ));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / r, w / r);
    let inv = 1.0 / (r * r) as f64;
    Ok(Tensor::from_fn([c, ho, wo], |i| {
        let (ch, y, xx) = (i / (ho * wo), (i / wo) % ho, i % wo);
        let mut s = 0f64;
        for dy in 0..r {
            for dx in 0..r {
                s += x[[ch, y * r + dy, xx * r + dx]] as f64;
            }
        }
        (s * inv) as f32
    }))
}

/// JPEG luminance table divided by 4, on the 0..255 scale.
const BASE_TABLE: [f64; 64] = {
    const Q: [u8; 64] = [
        16, 11, 10, 16, 24, 40, 51, 61, //
        12, 12, 14, 19, 26, 58, 60, 55, //
        14, 13, 16, 24, 40, 57, 69, 56, //
        14, 17, 22, 29, 51, 87, 80, 62, //
        18, 22, 37, 56, 68, 109, 103, 77, //
        24, 35, 55, 64, 81, 104, 113, 92, //
        49, 64, 78, 87, 103, 121, 120, 101, //
        72, 92, 95, 98, 112, 100, 103, 99,
    ];
    let mut t = [0f64; 64];
    let mut i = 0;
    while i < 64 {
        t[i] = Q[i] as f64 / 4.0;
        i += 1;
    }
    t
};

fn dct_basis() -> [[f64; 8]; 8] {
    let mut b = [[0f64; 8]; 8];
    for (u, row) in b.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
        }
    }
    b
}

/// Orthonormal 2-D DCT-II of a row-major 8x8 block.
pub fn dct_8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0f64; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0f64; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Inverse of [`dct_8x8`].
pub fn idct_8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0f64; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|v| b[v][y] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0f64; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| b[u][x] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

pub fn quant_scale(crf: u32) -> f64 {
    2f64.powf((crf as f64 - 18.0) / 6.0)
}

/// Block-DCT quantization with step `scale × base table`; `scale = 0` skips
/// quantization (pure transform round trip). The DC coefficient is never
/// quantized, and blocks left with only DC are written back as their exact
/// mean. The result is not clamped.
pub fn dct_quantize(frame: &Tensor<f32>, scale: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = frame.chw()?;
    let (hp, wp) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let mut out = Tensor::zeros([c, h, w]);
    let od = out.data_mut();
    for ch in 0..c {
        for by in (0..hp).step_by(8) {
            for bx in (0..wp).step_by(8) {
                let mut blk = [0f64; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let (sy, sx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                        blk[y * 8 + x] = frame[[ch, sy, sx]] as f64;
                    }
                }
                let rec = if scale > 0.0 {
                    let mut coef = dct_8x8(&blk);
                    let mut any_ac = false;
                    for (i, cv) in coef.iter_mut().enumerate().skip(1) {
                        let step = scale * BASE_TABLE[i] / 255.0;
                        *cv = (*cv / step).round() * step;
                        any_ac |= *cv != 0.0;
                    }
                    if any_ac {
                        idct_8x8(&coef)
                    } else {
                        [blk.iter().sum::<f64>() / 64.0; 64]
                    }
                } else {
                    idct_8x8(&dct_8x8(&blk))
                };
                for y in 0..8.min(h.saturating_sub(by)) {
                    for x in 0..8.min(w.saturating_sub(bx)) {
                        od[(ch * h + by + y) * w + bx + x] = rec[y * 8 + x] as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Compression stand-in: quantize at the given crf, then clamp to `[0, 1]`.
pub fn compress_standin(frame: &Tensor<f32>, crf: u32) -> Result<Tensor<f32>> {
    check_crf(crf)?;
    Ok(dct_quantize(frame, quant_scale(crf))?.clamp(0.0, 1.0))
}

/// Noise generator for frame `index` of a clip: stream `index` of the seed.
pub fn noise_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `clamp(compress(downsample(blur(Y) + n)))` for frame `index` of a clip.
pub fn degrade_frame(y: &Tensor<f32>, p: &DegradationParams, index: usize) -> Result<Tensor<f32>> {
    p.validate()?;
    let (c, h, w) = y.chw()?;
    if h % p.r != 0 || w % p.r != 0 {
        return Err(Error::invalid(
            "degrade",
            format!("{h}x{w} is not divisible by r = {}", p.r),
        ));
    }
    let mut x = if p.sigma > 0.0 {
        depthwise_conv2d(y, &gaussian_kernel(p.sigma, None)?, PadMode::Replicate)?
    } else {
        y.clone()
    };
    if p.delta > 0.0 {
        let normal = Normal::new(0.0, p.delta / 255.0)
            .map_err(|e| Error::invalid("degrade", e.to_string()))?;
        let mut rng = noise_rng(p.seed, index);
        for v in x.data_mut().iter_mut().take(c * h * w) {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let x = area_downsample(&x, p.r)?;
    let x = match p.crf {
        Some(crf) => compress_standin(&x, crf)?,
        None => x,
    };
    Ok(x.clamp(0.0, 1.0))
}

/// Provenance of one degraded clip; replaying it reproduces the clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipManifest {
    pub clip_id: String,
    pub params: DegradationParams,
    pub files: Vec<String>,
}

impl ClipManifest {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("clip_id", &self.clip_id)
            .set("sigma", format!("{:?}", self.params.sigma))
            .set("delta", format!("{:?}", self.params.delta))
            .set("r", self.params.r)
            .set("crf", self.params.crf.map_or("off".to_string(), |c| c.to_string()))
            .set("seed", self.params.seed)
            .set("frames", self.files.len())
            .set("files", self.files.join(","));
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let num = |k: &str| -> Result<f64> {
            kv.parse_key(k)?
                .ok_or_else(|| Error::format("clip manifest", format!("missing `{k}`")))
        };
        let crf = match kv.require("crf")? {
            "off" => None,
            v => Some(v.parse().map_err(|_| Error::format("clip manifest", format!("bad crf `{v}`")))?),
        };
        let params = DegradationParams {
            sigma: num("sigma")?,
            delta: num("delta")?,
            r: kv.parse_key("r")?.ok_or_else(|| Error::format("clip manifest", "missing `r`"))?,
            crf,
            seed: kv.parse_key("seed")?.ok_or_else(|| Error::format("clip manifest", "missing `seed`"))?,
        };
        params.validate()?;
        let files: Vec<String> = kv
            .get("files")
            .filter(|s| !s.is_empty())
            .map(|s| s.split(',').map(str::to_string).collect())
            .unwrap_or_default();
        if let Some(n) = kv.parse_key::<usize>("frames")? {
            if n != files.len() {
                return Err(Error::format("clip manifest", "frame count does not match file list"));
            }
        }
        Ok(ClipManifest {
            clip_id: kv.require("clip_id")?.to_string(),
            params,
            files,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_kv().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }
}

/// Degrades every frame with the clip's parameters; frame `i` draws noise
/// from stream `i`.
pub fn degrade_sequence(frames: &[Tensor<f32>], manifest: &ClipManifest) -> Result<Vec<Tensor<f32>>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("degrade_sequence", "empty clip"))?;
    for f in frames {
        first.same_shape(f, "degrade_sequence")?;
    }
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| degrade_frame(f, &manifest.params, i))
        .collect()
}
