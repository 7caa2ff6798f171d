//! Toy corpus: coloured shapes drifting over panning sinusoidal backgrounds,
//! rendered at HR and degraded per clip.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::degradation::{degrade_sequence, sample_params, ClipManifest};
use crate::error::{Error, Result};
use crate::io::frame::{frame_name, read_sequence, write_frame};
use crate::io::prepare_output_dir;
use crate::rng::substream;
use crate::tensor::Tensor;

/// LR inputs with their HR ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedClip {
    pub lr: Vec<Tensor<f32>>,
    pub hr: Vec<Tensor<f32>>,
    pub manifest: Option<ClipManifest>,
}

impl PairedClip {
    pub fn validate(&self, scale: usize) -> Result<()> {
        if self.lr.is_empty() || self.lr.len() != self.hr.len() {
            return Err(Error::invalid(
                "paired clip",
                format!("{} LR frames vs {} HR frames", self.lr.len(), self.hr.len()),
            ));
        }
        let (c, h, w) = self.lr[0].chw()?;
        for (l, g) in self.lr.iter().zip(&self.hr) {
            if l.shape() != [c, h, w] || g.shape() != [c, h * scale, w * scale] {
                return Err(Error::invalid(
                    "paired clip",
                    format!("frame shapes {:?} / {:?} do not match x{scale}", l.shape(), g.shape()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyConfig {
    pub clips: usize,
    pub frames: usize,
    pub lr_size: usize,
    pub scale: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            clips: 8,
            frames: 5,
            lr_size: 16,
            scale: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub train: Vec<PairedClip>,
    pub val: PairedClip,
}

struct Grating {
    freq: (f32, f32),
    phase: f32,
    amp: [f32; 3],
}

struct Shape {
    disc: bool,
    half: f32,
    pos: (f32, f32),
    vel: (f32, f32),
    color: [f32; 3],
}

fn render_clip<R: Rng>(rng: &mut R, frames: usize, size: usize) -> Vec<Tensor<f32>> {
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let gratings: Vec<Grating> = (0..2)
        .map(|_| {
            let f = rng.random_range(0.03..0.12);
            let th = rng.random_range(0.0..std::f32::consts::PI);
            Grating {
                freq: (f * th.cos(), f * th.sin()),
                phase: rng.random_range(0.0..std::f32::consts::TAU),
                amp: std::array::from_fn(|_| rng.random_range(0.05..0.15)),
            }
        })
        .collect();
    let pan = (rng.random_range(-2.0f32..2.0), rng.random_range(-2.0f32..2.0));
    let s = size as f32;
    let shapes: Vec<Shape> = (0..rng.random_range(2..=3))
        .map(|_| Shape {
            disc: rng.random_bool(0.5),
            half: rng.random_range(0.08..0.2) * s,
            pos: (rng.random_range(0.2..0.8) * s, rng.random_range(0.2..0.8) * s),
            vel: (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
            color: std::array::from_fn(|_| if rng.random_bool(0.5) { rng.random_range(0.0..0.2) } else { rng.random_range(0.8..1.0) }),
        })
        .collect();

    (0..frames)
        .map(|t| {
            let t = t as f32;
            Tensor::from_fn([3, size, size], |i| {
                let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                for sh in shapes.iter().rev() {
                    let dx = px - (sh.pos.0 + sh.vel.0 * t);
                    let dy = py - (sh.pos.1 + sh.vel.1 * t);
                    let inside = if sh.disc {
                        dx * dx + dy * dy <= sh.half * sh.half
                    } else {
                        dx.abs() <= sh.half && dy.abs() <= sh.half
                    };
                    if inside {
                        return sh.color[c];
                    }
                }
                let (bx, by) = (px + pan.0 * t, py + pan.1 * t);
                let v = gratings.iter().fold(base[c], |acc, g| {
                    acc + g.amp[c] * (g.freq.0 * bx + g.freq.1 * by + g.phase).sin()
                });
                v.clamp(0.0, 1.0)
            })
        })
        .collect()
}

fn make_clip(cfg: &ToyConfig, index: usize) -> Result<PairedClip> {
    let mut scene = substream(cfg.seed, &format!("toy/scene/{index}"));
    let hr = render_clip(&mut scene, cfg.frames, cfg.lr_size * cfg.scale);
    let mut params = sample_params(&mut substream(cfg.seed, &format!("degrade/params/{index}")));
    params.r = cfg.scale;
    let manifest = ClipManifest {
        clip_id: format!("clip_{index:03}"),
        params,
        files: (0..cfg.frames).map(frame_name).collect(),
    };
    let lr = degrade_sequence(&hr, &manifest)?;
    Ok(PairedClip {
        lr,
        hr,
        manifest: Some(manifest),
    })
}

/// `clips` training clips plus one held-out clip from a separate stream.
pub fn generate_toy_dataset(cfg: &ToyConfig) -> Result<ToyDataset> {
    if cfg.clips == 0 || cfg.frames == 0 || cfg.lr_size == 0 || cfg.scale == 0 {
        return Err(Error::invalid("make_toy_data", "all sizes must be positive"));
    }
    let train = (0..cfg.clips).map(|i| make_clip(cfg, i)).collect::<Result<Vec<_>>>()?;
    let val = make_clip(cfg, cfg.clips)?;
    Ok(ToyDataset { train, val })
}

/// Writes `dir/clip_XXX/{hr,lr}/frame_XXXX.ppm` plus `lr/manifest.txt`.
pub fn write_split(dir: impl AsRef<Path>, clips: &[PairedClip], force: bool) -> Result<()> {
    let dir = dir.as_ref();
    prepare_output_dir(dir, force)?;
    for (i, clip) in clips.iter().enumerate() {
        let cdir = dir.join(format!("clip_{i:03}"));
        for (sub, frames) in [("hr", &clip.hr), ("lr", &clip.lr)] {
            let d = cdir.join(sub);
            std::fs::create_dir_all(&d).map_err(Error::at_path(&d))?;
            for (t, f) in frames.iter().enumerate() {
                write_frame(f, d.join(frame_name(t)))?;
            }
        }
        if let Some(m) = &clip.manifest {
            m.save(cdir.join("lr").join("manifest.txt"))?;
        }
    }
    Ok(())
}

/// Reads every `clip_*` directory written by [`write_split`], in name order.
pub fn load_split(dir: impl AsRef<Path>) -> Result<Vec<PairedClip>> {
    let dir = dir.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::at_path(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid("load dataset", format!("no clip directories in {}", dir.display())));
    }
    dirs.iter()
        .map(|d| {
            let (_, lr) = read_sequence(d.join("lr"))?;
            let (_, hr) = read_sequence(d.join("hr"))?;
            let mpath = d.join("lr").join("manifest.txt");
            let manifest = if mpath.exists() { Some(ClipManifest::load(mpath)?) } else { None };
            Ok(PairedClip { lr, hr, manifest })
        })
        .collect()
}
