//! One forward definition, two executors: plain tensors for inference and a
//! gradient tape for training.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::weights::ModelWeights;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::filter_bank::{apply_kernel, FilterKernel};
use crate::hsa::{sca_aggregate, AttentionMaps};
use crate::tensor::{
    backward_warp, bilinear_resize, concat_channels, conv2d, pixel_shuffle, ConvOptions, FlowField,
    PadMode, ResizeScale, Tensor,
};

pub(crate) fn conv3() -> ConvOptions {
    ConvOptions::same(3, 3, PadMode::Zero)
}

pub trait Exec {
    type V: Clone;

    fn constant(&mut self, t: Tensor<f32>) -> Self::V;
    fn param(&mut self, name: &str) -> Result<Self::V>;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<f32>;

    /// 3x3 zero-padded convolution.
    fn conv(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn pixel_shuffle(&mut self, x: &Self::V, r: usize) -> Result<Self::V>;
    fn upsample(&mut self, x: &Self::V, r: usize) -> Result<Self::V>;
    fn warp(&mut self, x: &Self::V, flow: &FlowField) -> Result<Self::V>;
    fn filter(&mut self, x: &Self::V, k: &FilterKernel) -> Result<Self::V>;
    fn sca(
        &mut self,
        q: &Self::V,
        keys: &[Self::V],
        values: &[Self::V],
    ) -> Result<(Self::V, AttentionMaps<f32>)>;
}

/// Immediate evaluation on shared tensors.
pub struct Eager {
    params: BTreeMap<String, Arc<Tensor<f32>>>,
}

impl Eager {
    pub fn new(w: &ModelWeights) -> Self {
        Eager {
            params: w
                .params()
                .iter()
                .map(|(k, v)| (k.clone(), Arc::new(v.clone())))
                .collect(),
        }
    }
}

impl Exec for Eager {
    type V = Arc<Tensor<f32>>;

    fn constant(&mut self, t: Tensor<f32>) -> Self::V {
        Arc::new(t)
    }

    fn param(&mut self, name: &str) -> Result<Self::V> {
        self.params
            .get(name)
            .cloned()
            .ok_or_else(|| Error::invalid("model weights", format!("no parameter `{name}`")))
    }

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<f32> {
        v
    }

    fn conv(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V> {
        Ok(Arc::new(conv2d(x, w, b.map(|b| &**b), conv3())?))
    }

    fn relu(&mut self, x: &Self::V) -> Result<Self::V> {
        Ok(Arc::new(x.map(|v| v.max(0.0))))
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        Ok(Arc::new(a.add(b)?))
    }

    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        Ok(Arc::new(concat_channels(a, b)?))
    }

    fn pixel_shuffle(&mut self, x: &Self::V, r: usize) -> Result<Self::V> {
        Ok(Arc::new(pixel_shuffle(x, r)?))
    }

    fn upsample(&mut self, x: &Self::V, r: usize) -> Result<Self::V> {
        Ok(Arc::new(bilinear_resize(x, ResizeScale::int(r))?))
    }

    fn warp(&mut self, x: &Self::V, flow: &FlowField) -> Result<Self::V> {
        if flow.is_zero() {
            return Ok(x.clone());
        }
        Ok(Arc::new(backward_warp(x, flow)?))
    }

    fn filter(&mut self, x: &Self::V, k: &FilterKernel) -> Result<Self::V> {
        Ok(Arc::new(apply_kernel(x, k)?))
    }

    fn sca(
        &mut self,
        q: &Self::V,
        keys: &[Self::V],
        values: &[Self::V],
    ) -> Result<(Self::V, AttentionMaps<f32>)> {
        let k: Vec<&Tensor<f32>> = keys.iter().map(|v| &**v).collect();
        let v: Vec<&Tensor<f32>> = values.iter().map(|v| &**v).collect();
        let (out, maps) = sca_aggregate(q, &k, &v)?;
        Ok((Arc::new(out), maps))
    }
}

/// Records onto a tape; every model parameter is a named leaf.
pub struct Taped<'t> {
    tape: &'t mut Tape<f32>,
    params: BTreeMap<String, NodeId>,
}

impl<'t> Taped<'t> {
    pub fn new(tape: &'t mut Tape<f32>, w: &ModelWeights) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (name, t) in w.params() {
            params.insert(name.clone(), tape.leaf(name, t.clone())?);
        }
        Ok(Taped { tape, params })
    }

    pub fn tape(&mut self) -> &mut Tape<f32> {
        self.tape
    }
}

impl Exec for Taped<'_> {
    type V = NodeId;

    fn constant(&mut self, t: Tensor<f32>) -> NodeId {
        self.tape.constant(t)
    }

    fn param(&mut self, name: &str) -> Result<NodeId> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("model weights", format!("no parameter `{name}`")))
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor<f32> {
        self.tape.value(*v)
    }

    fn conv(&mut self, x: &NodeId, w: &NodeId, b: Option<&NodeId>) -> Result<NodeId> {
        self.tape.conv2d(*x, *w, b.copied(), conv3())
    }

    fn relu(&mut self, x: &NodeId) -> Result<NodeId> {
        self.tape.relu(*x)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.add(*a, *b)
    }

    fn concat(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.concat(*a, *b)
    }

    fn pixel_shuffle(&mut self, x: &NodeId, r: usize) -> Result<NodeId> {
        self.tape.pixel_shuffle(*x, r)
    }

    fn upsample(&mut self, x: &NodeId, r: usize) -> Result<NodeId> {
        self.tape.bilinear_resize(*x, ResizeScale::int(r))
    }

    fn warp(&mut self, x: &NodeId, flow: &FlowField) -> Result<NodeId> {
        if flow.is_zero() {
            return Ok(*x);
        }
        self.tape.warp(*x, flow)
    }

    fn filter(&mut self, x: &NodeId, k: &FilterKernel) -> Result<NodeId> {
        self.tape.filter(*x, k)
    }

    fn sca(
        &mut self,
        q: &NodeId,
        keys: &[NodeId],
        values: &[NodeId],
    ) -> Result<(NodeId, AttentionMaps<f32>)> {
        self.tape.sca(*q, keys, values)
    }
}
