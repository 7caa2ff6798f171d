//! Fixed blur / unsharp-mask kernels that turn one hidden state into a pool
//! of filtered variants.
//!
//! Kernels keep their published weights in [`FilterKernel::base`]. Filtering
//! always uses the base divided by its sum, so every variant has exactly unit
//! DC gain even where the published table rounds to 1.0001 or 0.9997.

use crate::error::{Error, Result};
use crate::tensor::{depthwise_conv2d, PadMode, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FilterMode {
    /// `h ⊗ k`
    Blur,
    /// `h + (h - h ⊗ k)`, unsharp masking with `k` as the blur base.
    Sharp,
    /// Unfiltered `h`. Only present when a bank opts in.
    Identity,
}

impl FilterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::Blur => "blur",
            FilterMode::Sharp => "sharp",
            FilterMode::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(FilterMode::Blur),
            "sharp" => Ok(FilterMode::Sharp),
            "identity" => Ok(FilterMode::Identity),
            _ => Err(Error::invalid("filter mode", format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterKernel {
    name: String,
    mode: FilterMode,
    base: Tensor<f32>,
    weights: Tensor<f32>,
}

const DC_TOLERANCE: f64 = 5e-3;

impl FilterKernel {
    pub fn new(name: impl Into<String>, mode: FilterMode, base: Tensor<f32>) -> Result<Self> {
        let name = name.into();
        let (kh, kw) = match base.shape() {
            &[kh, kw] => (kh, kw),
            s => {
                return Err(Error::invalid(
                    "filter kernel",
                    format!("{name}: expected a 2-D kernel, got {s:?}"),
                ))
            }
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(
                "filter kernel",
                format!("{name}: kernel dimensions must be odd, got {kh}x{kw}"),
            ));
        }
        let total: f64 = base.data().iter().map(|&v| v as f64).sum();
        if (total - 1.0).abs() > DC_TOLERANCE {
            return Err(Error::invalid(
                "filter kernel",
                format!("{name}: weights sum to {total}, not 1"),
            ));
        }
        let weights = base.map(|v| (v as f64 / total) as f32);
        Ok(FilterKernel {
            name,
            mode,
            base,
            weights,
        })
    }

    pub fn identity() -> Self {
        FilterKernel::new("identity", FilterMode::Identity, Tensor::full([1, 1], 1.0)).unwrap()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    /// Weights as published.
    pub fn base(&self) -> &Tensor<f32> {
        &self.base
    }

    /// Unit-sum weights actually applied.
    pub fn weights(&self) -> &Tensor<f32> {
        &self.weights
    }

    pub fn size(&self) -> (usize, usize) {
        (self.base.shape()[0], self.base.shape()[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    kernels: Vec<FilterKernel>,
}

impl FilterBank {
    pub fn new(kernels: Vec<FilterKernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::invalid("filter bank", "bank must hold at least one kernel"));
        }
        Ok(FilterBank { kernels })
    }

    /// Same bank with an unfiltered entry appended.
    pub fn with_identity(mut self) -> Self {
        if !self.kernels.iter().any(|k| k.mode == FilterMode::Identity) {
            self.kernels.push(FilterKernel::identity());
        }
        self
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[FilterKernel] {
        &self.kernels
    }

    pub fn modes(&self) -> Vec<FilterMode> {
        self.kernels.iter().map(|k| k.mode).collect()
    }

    /// Bank index of the `index`-th kernel with the given mode.
    pub fn nth_of_mode(&self, mode: FilterMode, index: usize) -> Result<usize> {
        self.kernels
            .iter()
            .enumerate()
            .filter(|(_, k)| k.mode == mode)
            .nth(index)
            .map(|(i, _)| i)
            .ok_or_else(|| {
                Error::invalid(
                    "pool override",
                    format!("bank has no {} kernel #{index}", mode.as_str()),
                )
            })
    }
}

fn kernel_2d(rows: &[&[f32]]) -> Tensor<f32> {
    let h = rows.len();
    let w = rows[0].len();
    Tensor::new([h, w], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
}

/// The five-kernel pool: three blur bases, two unsharp-mask bases.
pub fn default_bank() -> FilterBank {
    let m3 = 1.0 / 9.0;
    let m5 = 1.0 / 25.0;
    let sharp5_r1: &[f32] = &[0.0369, 0.0392, 0.0400, 0.0392, 0.0369];
    let sharp5_r2: &[f32] = &[0.0392, 0.0416, 0.0424, 0.0416, 0.0392];
    let sharp5_r3: &[f32] = &[0.0400, 0.0424, 0.0433, 0.0424, 0.0400];
    let kernels = vec![
        FilterKernel::new("blur-mean-3x3", FilterMode::Blur, Tensor::full([3, 3], m3)),
        FilterKernel::new("blur-mean-5x5", FilterMode::Blur, Tensor::full([5, 5], m5)),
        FilterKernel::new(
            "blur-gauss-3x3",
            FilterMode::Blur,
            kernel_2d(&[
                &[0.1108, 0.1113, 0.1108],
                &[0.1113, 0.1117, 0.1113],
                &[0.1108, 0.1113, 0.1108],
            ]),
        ),
        FilterKernel::new(
            "sharp-gauss-3x3",
            FilterMode::Sharp,
            kernel_2d(&[
                &[0.1096, 0.1118, 0.1096],
                &[0.1118, 0.1141, 0.1118],
                &[0.1096, 0.1118, 0.1096],
            ]),
        ),
        // The published fifth row repeats the third; mirrored from the first
        // row instead so the kernel is symmetric (sum 1.0005 before scaling).
        FilterKernel::new(
            "sharp-gauss-5x5",
            FilterMode::Sharp,
            kernel_2d(&[sharp5_r1, sharp5_r2, sharp5_r3, sharp5_r2, sharp5_r1]),
        ),
    ];
    FilterBank::new(kernels.into_iter().map(|k| k.unwrap()).collect()).unwrap()
}

fn blur<T: Real>(h: &Tensor<T>, k: &FilterKernel) -> Result<Tensor<T>> {
    depthwise_conv2d(h, &k.weights.cast(), PadMode::Replicate)
}

/// Depthwise blur with edge replication.
pub fn blur_variant<T: Real>(h: &Tensor<T>, k: &FilterKernel) -> Result<Tensor<T>> {
    if k.mode != FilterMode::Blur {
        return Err(Error::invalid(
            "blur_variant",
            format!("{} is a {} kernel", k.name, k.mode.as_str()),
        ));
    }
    blur(h, k)
}

/// Unsharp masking: `2·h − blur(h)`.
pub fn sharp_variant<T: Real>(h: &Tensor<T>, k: &FilterKernel) -> Result<Tensor<T>> {
    if k.mode != FilterMode::Sharp {
        return Err(Error::invalid(
            "sharp_variant",
            format!("{} is a {} kernel", k.name, k.mode.as_str()),
        ));
    }
    let b = blur(h, k)?;
    let two = T::one() + T::one();
    h.zip_map(&b, |x, bx| two * x - bx)
}

/// Filters `h` with `k` according to the kernel's mode.
pub fn apply_kernel<T: Real>(h: &Tensor<T>, k: &FilterKernel) -> Result<Tensor<T>> {
    match k.mode {
        FilterMode::Blur => blur_variant(h, k),
        FilterMode::Sharp => sharp_variant(h, k),
        FilterMode::Identity => Ok(h.clone()),
    }
}

/// Forces every pool slot to one variant (the `index`-th kernel of `mode`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolOverride {
    pub mode: FilterMode,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct HiddenStatePool<T = f32> {
    entries: Vec<Tensor<T>>,
    bank: FilterBank,
}

impl<T: Real> HiddenStatePool<T> {
    pub fn entries(&self) -> &[Tensor<T>] {
        &self.entries
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_pool<T: Real>(h: &Tensor<T>, bank: &FilterBank) -> Result<HiddenStatePool<T>> {
    build_pool_with(h, bank, None)
}

/// Pool construction, optionally replacing all `N` slots with one variant.
pub fn build_pool_with<T: Real>(
    h: &Tensor<T>,
    bank: &FilterBank,
    pool_override: Option<PoolOverride>,
) -> Result<HiddenStatePool<T>> {
    if bank.is_empty() {
        return Err(Error::invalid("build_pool", "empty filter bank"));
    }
    if !h.is_finite() {
        return Err(Error::NonFinite {
            op: "build_pool input".into(),
        });
    }
    let entries = match pool_override {
        None => bank
            .kernels
            .iter()
            .map(|k| apply_kernel(h, k))
            .collect::<Result<Vec<_>>>()?,
        Some(o) => {
            let i = bank.nth_of_mode(o.mode, o.index)?;
            let v = apply_kernel(h, &bank.kernels[i])?;
            vec![v; bank.len()]
        }
    };
    Ok(HiddenStatePool {
        entries,
        bank: bank.clone(),
    })
}
