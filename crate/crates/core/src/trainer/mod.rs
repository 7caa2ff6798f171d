//! Stage-1 training under an L1 loss with temporal flips and a weight EMA.

mod toy;

pub use toy::{generate_toy_dataset, load_split, write_split, PairedClip, ToyConfig, ToyDataset};

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use crate::autodiff::Tape;
use crate::engine::{forward_sequence_taped, run_sequence, FlowProvider, ModelConfig, ModelWeights, RunOptions, Taped};
use crate::error::{Error, Result};
use crate::io::kv::KeyValues;
use crate::rng::substream;
use crate::tensor::{bilinear_resize, ResizeScale, Tensor};

/// Mean absolute error.
pub fn l1_loss(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    pred.mean_abs_diff(gt)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`; identical inputs give `+inf`.
pub fn psnr(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    pred.same_shape(gt, "psnr")?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / pred.len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub fn temporal_flip<T: Clone>(clip: &[T]) -> Vec<T> {
    clip.iter().rev().cloned().collect()
}

/// `shadow = decay · shadow + (1 − decay) · weights`, per parameter.
pub fn ema_update(weights: &ModelWeights, shadow: &mut ModelWeights, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::invalid("ema_update", format!("decay must be in [0, 1], got {decay}")));
    }
    if !weights.same_structure(shadow) {
        return Err(Error::invalid("ema_update", "weights and shadow differ in structure"));
    }
    let names: Vec<String> = weights.params().keys().cloned().collect();
    for name in names {
        let w = weights.get(&name)?;
        let s = shadow.get_mut(&name)?;
        for (sv, &wv) in s.data_mut().iter_mut().zip(w.data()) {
            *sv = (decay * *sv as f64 + (1.0 - decay) * wv as f64) as f32;
        }
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, w: &mut ModelWeights, grads: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = w.get_mut(name)?;
            p.same_shape(g, "adam")?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                let upd = self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                *pv = (*pv as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_len: usize,
    /// Square LR crop side.
    pub lr_patch: usize,
    pub ema_decay: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hsa: bool,
    pub flow: FlowProvider,
    pub model: ModelConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            iterations: 1000,
            batch_size: 2,
            learning_rate: 1e-4,
            clip_len: 5,
            lr_patch: 16,
            ema_decay: 0.999,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hsa: true,
            flow: FlowProvider::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("training config", m));
        if self.iterations == 0 || self.batch_size == 0 || self.clip_len == 0 || self.lr_patch == 0 {
            return bad("iterations, batch_size, clip_len and lr_patch must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay must be in (0, 1), got {}", self.ema_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("optimizer betas must be in [0, 1) and eps > 0".into());
        }
        if self.lr_patch % self.model.scale != 0 {
            return bad(format!(
                "lr_patch {} must be divisible by the scale factor {}",
                self.lr_patch, self.model.scale
            ));
        }
        self.model.validate()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let known = [
            "iterations", "batch_size", "learning_rate", "clip_len", "lr_patch", "ema_decay",
            "seed", "beta1", "beta2", "eps", "hsa", "flow", "channels", "scale", "rb1_blocks",
            "rb2_blocks", "data", "out", "init_seed", "checkpoint_every",
        ];
        if let Some(k) = kv.keys().find(|k| !known.contains(k)) {
            return Err(Error::invalid("training config", format!("unknown key `{k}`")));
        }
        let cfg = TrainingConfig {
            iterations: kv.parse_or("iterations", d.iterations)?,
            batch_size: kv.parse_or("batch_size", d.batch_size)?,
            learning_rate: kv.parse_or("learning_rate", d.learning_rate)?,
            clip_len: kv.parse_or("clip_len", d.clip_len)?,
            lr_patch: kv.parse_or("lr_patch", d.lr_patch)?,
            ema_decay: kv.parse_or("ema_decay", d.ema_decay)?,
            seed: kv.parse_or("seed", d.seed)?,
            beta1: kv.parse_or("beta1", d.beta1)?,
            beta2: kv.parse_or("beta2", d.beta2)?,
            eps: kv.parse_or("eps", d.eps)?,
            hsa: kv.parse_or("hsa", d.hsa)?,
            flow: match kv.get("flow") {
                Some(f) => FlowProvider::parse(f)?,
                None => d.flow,
            },
            model: ModelConfig {
                channels: kv.parse_or("channels", d.model.channels)?,
                scale: kv.parse_or("scale", d.model.scale)?,
                rb1_blocks: kv.parse_or("rb1_blocks", d.model.rb1_blocks)?,
                rb2_blocks: kv.parse_or("rb2_blocks", d.model.rb2_blocks)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            hsa: self.hsa,
            flow: self.flow,
            ..RunOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub elapsed_secs: f64,
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss,elapsed_s\n");
    for r in records {
        s.push_str(&format!("{},{:.8},{:.3}\n", r.iteration, r.loss, r.elapsed_secs));
    }
    s
}

/// Mean of the first and last `window` losses.
pub fn smoothed_endpoints(records: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    if records.is_empty() || window == 0 {
        return None;
    }
    let n = window.min(records.len());
    let mean = |r: &[LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    Some((mean(&records[..n]), mean(&records[records.len() - n..])))
}

pub struct TrainOutput {
    pub weights: ModelWeights,
    pub ema: ModelWeights,
    pub losses: Vec<LossRecord>,
}

/// State handed to the per-iteration callback.
pub struct Progress<'a> {
    pub record: LossRecord,
    pub weights: &'a ModelWeights,
    pub ema: &'a ModelWeights,
}

/// Crops a random `p x p` LR window (and its HR counterpart) from
/// `clip_len` consecutive frames.
fn sample_crop<R: Rng>(
    clip: &PairedClip,
    cfg: &TrainingConfig,
    rng: &mut R,
) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
    let n = clip.lr.len();
    let len = cfg.clip_len.min(n);
    let t0 = rng.random_range(0..=n - len);
    let (_, h, w) = clip.lr[0].chw()?;
    let p = cfg.lr_patch;
    if p > h || p > w {
        return Err(Error::invalid(
            "train_stage1",
            format!("lr_patch {p} exceeds LR frame {h}x{w}"),
        ));
    }
    let y0 = rng.random_range(0..=h - p);
    let x0 = rng.random_range(0..=w - p);
    let r = cfg.model.scale;
    let crop = |t: &Tensor<f32>, y0: usize, x0: usize, s: usize| {
        let c = t.shape()[0];
        Tensor::from_fn([c, s, s], |i| {
            let (ch, y, x) = (i / (s * s), (i / s) % s, i % s);
            t[[ch, y0 + y, x0 + x]]
        })
    };
    let lr = clip.lr[t0..t0 + len].iter().map(|f| crop(f, y0, x0, p)).collect();
    let hr = clip.hr[t0..t0 + len]
        .iter()
        .map(|f| crop(f, y0 * r, x0 * r, p * r))
        .collect();
    Ok((lr, hr))
}

fn check_dataset(data: &[PairedClip], cfg: &TrainingConfig, w0: &ModelWeights) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("train_stage1", "empty dataset"));
    }
    if w0.config() != &cfg.model {
        return Err(Error::invalid(
            "train_stage1",
            "initial weights do not match the configured architecture",
        ));
    }
    for (i, c) in data.iter().enumerate() {
        c.validate(cfg.model.scale)
            .map_err(|e| Error::invalid("train_stage1", format!("clip {i}: {e}")))?;
    }
    Ok(())
}

/// One batch: mean over clips of the per-clip loss, with summed gradients
/// scaled to match. Clips are reduced in order, so results are reproducible.
pub fn batch_gradients(
    w: &ModelWeights,
    batch: &[(Vec<Tensor<f32>>, Vec<Tensor<f32>>)],
    opts: &RunOptions,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
    let mut total = 0.0;
    let mut acc: Option<BTreeMap<String, Tensor<f32>>> = None;
    let scale = 1.0 / batch.len() as f32;
    for (lr, hr) in batch {
        let mut tape = Tape::new();
        let mut ex = Taped::new(&mut tape, w)?;
        let outs = forward_sequence_taped(&mut ex, lr, w, opts)?;
        let tape = ex.tape();
        let mut loss = None;
        for (o, gt) in outs.iter().zip(hr) {
            let g = tape.constant(gt.clone());
            let l = tape.l1_loss(*o, g)?;
            loss = Some(match loss {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let loss = tape.scale(loss.expect("non-empty clip"), 1.0 / outs.len() as f64)?;
        total += tape.value(loss).data()[0] as f64;
        let grads = tape.backward(loss)?.into_map();
        match &mut acc {
            None => acc = Some(grads.into_iter().map(|(k, g)| (k, g.scale(scale))).collect()),
            Some(a) => {
                for (k, g) in grads {
                    let slot = a.get_mut(&k).expect("same parameters");
                    for (s, v) in slot.data_mut().iter_mut().zip(g.data()) {
                        *s += v * scale;
                    }
                }
            }
        }
    }
    Ok((total / batch.len() as f64, acc.expect("non-empty batch")))
}

/// Stage-1 loop: sample clip and crop, maybe flip, forward, L1 over every
/// frame, Adam step, EMA update.
pub fn train_stage1(
    data: &[PairedClip],
    cfg: &TrainingConfig,
    w0: &ModelWeights,
    mut on_iteration: impl FnMut(&Progress) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_dataset(data, cfg, w0)?;
    let opts = cfg.run_options();
    let mut crop_rng = substream(cfg.seed, "train/crop");
    let mut flip_rng = substream(cfg.seed, "train/flip");
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut w = w0.clone();
    let mut ema = w0.clone();
    let mut losses = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let clip = &data[crop_rng.random_range(0..data.len())];
            let (mut lr, mut hr) = sample_crop(clip, cfg, &mut crop_rng)?;
            if flip_rng.random_bool(0.5) {
                lr.reverse();
                hr.reverse();
            }
            batch.push((lr, hr));
        }
        let (loss, grads) = match batch_gradients(&w, &batch, &opts) {
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { iteration: it }),
            r => r?,
        };
        if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        adam.step(&mut w, &grads)?;
        ema_update(&w, &mut ema, cfg.ema_decay)?;
        let record = LossRecord {
            iteration: it,
            loss,
            elapsed_secs: start.elapsed().as_secs_f64(),
        };
        losses.push(record);
        on_iteration(&Progress {
            record,
            weights: &w,
            ema: &ema,
        })?;
    }
    Ok(TrainOutput {
        weights: w,
        ema,
        losses,
    })
}

/// Mean per-frame PSNR of the model and of plain bilinear upsampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub model_psnr: f64,
    pub bilinear_psnr: f64,
}

pub fn evaluate(w: &ModelWeights, clip: &PairedClip, opts: &RunOptions) -> Result<Evaluation> {
    clip.validate(w.config().scale)?;
    let out = run_sequence(&clip.lr, w, opts, None)?;
    let n = clip.hr.len() as f64;
    let mut model = 0.0;
    let mut bilinear = 0.0;
    for ((y, gt), x) in out.outputs.iter().zip(&clip.hr).zip(&clip.lr) {
        model += psnr(y, gt)?;
        let b = bilinear_resize(x, ResizeScale::int(w.config().scale))?.clamp(0.0, 1.0);
        bilinear += psnr(&b, gt)?;
    }
    Ok(Evaluation {
        model_psnr: model / n,
        bilinear_psnr: bilinear / n,
    })
}
