//! Recorded hidden states, one per processed frame.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{kv::KeyValues, prepare_output_dir, write_atomic};
use crate::tensor::{hst, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    /// The propagated state as it arrives at a step, before warping.
    Raw,
    /// The state actually fused at a step, after warping and HSA.
    PostHsa,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Raw => "raw",
            TraceKind::PostHsa => "post-hsa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(TraceKind::Raw),
            "post-hsa" => Ok(TraceKind::PostHsa),
            _ => Err(Error::invalid("trace", format!("unknown trace kind `{s}`"))),
        }
    }
}

/// Entry `t` (0-based) is the hidden state consumed by step `t + 1`; the
/// first entry of a plain run is therefore all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTrace {
    pub kind: TraceKind,
    pub model_hash: String,
    pub states: Vec<Tensor<f32>>,
}

impl HiddenTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Same shapes and kind with every state zeroed.
    pub fn zeros_like(&self) -> Self {
        HiddenTrace {
            kind: self.kind,
            model_hash: self.model_hash.clone(),
            states: self.states.iter().map(|s| Tensor::zeros(s.shape())).collect(),
        }
    }

    pub fn file_name(t: usize) -> String {
        format!("h_{t:06}.hst")
    }

    pub fn save(&self, dir: impl AsRef<Path>, force: bool) -> Result<()> {
        let dir = dir.as_ref();
        let first = self
            .states
            .first()
            .ok_or_else(|| Error::invalid("trace", "cannot save an empty trace"))?;
        prepare_output_dir(dir, force)?;
        for (i, s) in self.states.iter().enumerate() {
            write_atomic(dir.join(Self::file_name(i + 1)), &hst::encode(s))?;
        }
        let shape: Vec<String> = first.shape().iter().map(usize::to_string).collect();
        let mut kv = KeyValues::new();
        kv.set("model_hash", &self.model_hash)
            .set("frames", self.states.len())
            .set("shape", shape.join(","))
            .set("kind", self.kind.as_str());
        kv.save(dir.join("manifest.txt"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let kv = KeyValues::load(dir.join("manifest.txt"))?;
        let frames: usize = kv.parse_key("frames")?.unwrap_or(0);
        if frames == 0 {
            return Err(Error::format("trace manifest", "frame count must be positive"));
        }
        let shape = kv
            .require("shape")?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::format("trace manifest", format!("bad shape `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let kind = TraceKind::parse(kv.require("kind")?)?;
        let mut states = Vec::with_capacity(frames);
        for t in 1..=frames {
            let s = hst::load(dir.join(Self::file_name(t)))?;
            if s.shape() != shape.as_slice() {
                return Err(Error::shape("trace", s.shape(), &shape));
            }
            states.push(s);
        }
        Ok(HiddenTrace {
            kind,
            model_hash: kv.require("model_hash")?.to_string(),
            states,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t");
        let tr = HiddenTrace {
            kind: TraceKind::Raw,
            model_hash: "abc".into(),
            states: vec![random_tensor(&[2, 3, 4], 1), random_tensor(&[2, 3, 4], 2)],
        };
        tr.save(&path, false).unwrap();
        assert!(path.join("h_000002.hst").exists());
        assert_eq!(HiddenTrace::load(&path).unwrap(), tr);
        assert!(tr.save(&path, false).is_err());
        tr.save(&path, true).unwrap();
    }
}
