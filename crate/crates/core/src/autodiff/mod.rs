//! Tape-based reverse-mode differentiation over the tensor primitives.
//!
//! Values are computed eagerly when an op is recorded; [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients in a fixed order, so
//! results are reproducible bit for bit.

mod gradcheck;
pub mod suite;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::filter_bank::{apply_kernel, FilterKernel, FilterMode};
use crate::hsa::{sca_aggregate, sca_backward, AttentionMaps};
use crate::tensor::{
    backward_warp, backward_warp_adjoint, bilinear_resize, bilinear_resize_adjoint,
    concat_channels, conv2d, conv2d_backward, depthwise_conv2d_adjoint, pixel_shuffle,
    pixel_unshuffle, softmax_over_axis, ConvOptions, FlowField, PadMode, Real, ResizeScale, Tensor,
};

pub use gradcheck::{grad_check, GradCheck};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

/// A differentiable operation and its non-tensor parameters.
#[derive(Clone, Debug)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Sum,
    Mean,
    /// Inputs `[x, kernel]` or `[x, kernel, bias]`.
    Conv2d(ConvOptions),
    Concat,
    PixelShuffle(usize),
    BilinearResize(ResizeScale),
    /// Differentiable in the warped tensor only; the flow is a constant.
    Warp(FlowField),
    /// Fixed pool filter; the kernel is a constant.
    Filter(FilterKernel),
    Softmax(usize),
    /// Inputs `[query, key_1..key_n, value_1..value_n]`.
    Sca,
    /// Mean absolute error between two tensors.
    L1Loss,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Relu => "relu",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Conv2d(_) => "conv2d",
            Primitive::Concat => "concat",
            Primitive::PixelShuffle(_) => "pixel_shuffle",
            Primitive::BilinearResize(_) => "bilinear_resize",
            Primitive::Warp(_) => "backward_warp",
            Primitive::Filter(_) => "filter",
            Primitive::Softmax(_) => "softmax",
            Primitive::Sca => "sca_aggregate",
            Primitive::L1Loss => "l1_loss",
        }
    }

    /// Looks up a primitive by name, with default parameters where it has any.
    pub fn by_name(name: &str) -> Result<Primitive> {
        Ok(match name {
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "scale" => Primitive::Scale(1.0),
            "relu" => Primitive::Relu,
            "sum" => Primitive::Sum,
            "mean" => Primitive::Mean,
            "conv2d" => Primitive::Conv2d(ConvOptions::same(3, 3, PadMode::Zero)),
            "concat" => Primitive::Concat,
            "pixel_shuffle" => Primitive::PixelShuffle(2),
            "bilinear_resize" => Primitive::BilinearResize(ResizeScale::int(2)),
            "softmax" => Primitive::Softmax(0),
            "sca_aggregate" => Primitive::Sca,
            "l1_loss" => Primitive::L1Loss,
            _ => return Err(Error::UnknownPrimitive(name.to_string())),
        })
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        let ok = match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Concat | Primitive::L1Loss => n == 2,
            Primitive::Conv2d(_) => n == 2 || n == 3,
            Primitive::Sca => n >= 3 && n % 2 == 1,
            _ => n == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "record",
                format!("{} does not take {n} inputs", self.name()),
            ))
        }
    }
}

enum Kind {
    Leaf,
    Op(Primitive),
}

struct Node<T> {
    kind: Kind,
    inputs: Vec<usize>,
    value: Tensor<T>,
    /// Forward by-products the backward rule needs (softmax weights for SCA).
    aux: Option<Tensor<T>>,
    requires_grad: bool,
}

/// One forward pass worth of recorded nodes, parents always before children.
pub struct Tape<T = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    names: BTreeMap<String, usize>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            names: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> NodeId {
        self.nodes.push(node);
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Named leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, name: &str, value: Tensor<T>) -> Result<NodeId> {
        if self.names.contains_key(name) {
            return Err(Error::invalid("leaf", format!("duplicate leaf name `{name}`")));
        }
        let value = value.ensure_finite(name)?;
        let id = self.push(Node {
            kind: Kind::Leaf,
            inputs: vec![],
            value,
            aux: None,
            requires_grad: true,
        });
        self.names.insert(name.to_string(), id.index);
        Ok(id)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Node {
            kind: Kind::Leaf,
            inputs: vec![],
            value,
            aux: None,
            requires_grad: false,
        })
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        assert_eq!(id.tape, self.id, "node from another tape");
        &self.nodes[id.index].value
    }

    pub fn record(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        prim.check_arity(inputs.len())?;
        if let Some(bad) = inputs.iter().find(|n| n.tape != self.id || n.index >= self.nodes.len()) {
            return Err(Error::invalid(
                "record",
                format!("{} input {bad:?} does not belong to this tape", prim.name()),
            ));
        }
        let idx: Vec<usize> = inputs.iter().map(|n| n.index).collect();
        let vals: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let (value, aux) = forward(&prim, &vals)?;
        let value = value.ensure_finite(prim.name())?;
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Node {
            kind: Kind::Op(prim),
            inputs: idx,
            value,
            aux,
            requires_grad,
        }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.record(Primitive::Scale(s), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Relu, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Mean, &[a])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        opts: ConvOptions,
    ) -> Result<NodeId> {
        match bias {
            Some(b) => self.record(Primitive::Conv2d(opts), &[x, kernel, b]),
            None => self.record(Primitive::Conv2d(opts), &[x, kernel]),
        }
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Concat, &[a, b])
    }

    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        self.record(Primitive::PixelShuffle(r), &[x])
    }

    pub fn bilinear_resize(&mut self, x: NodeId, scale: ResizeScale) -> Result<NodeId> {
        self.record(Primitive::BilinearResize(scale), &[x])
    }

    pub fn warp(&mut self, x: NodeId, flow: &FlowField) -> Result<NodeId> {
        self.record(Primitive::Warp(flow.clone()), &[x])
    }

    pub fn filter(&mut self, x: NodeId, kernel: &FilterKernel) -> Result<NodeId> {
        self.record(Primitive::Filter(kernel.clone()), &[x])
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.record(Primitive::Softmax(axis), &[x])
    }

    /// Selective cross attention; also returns the attention weights.
    pub fn sca(
        &mut self,
        query: NodeId,
        keys: &[NodeId],
        values: &[NodeId],
    ) -> Result<(NodeId, AttentionMaps<T>)> {
        if keys.len() != values.len() {
            return Err(Error::invalid("sca", "key/value count mismatch"));
        }
        let mut inputs = vec![query];
        inputs.extend_from_slice(keys);
        inputs.extend_from_slice(values);
        let id = self.record(Primitive::Sca, &inputs)?;
        let maps = AttentionMaps::new(self.nodes[id.index].aux.clone().expect("sca weights"))?;
        Ok((id, maps))
    }

    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.record(Primitive::L1Loss, &[pred, target])
    }

    /// Gradients of a scalar `loss` with respect to every named leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let v = self.value(loss);
        if v.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", v.shape()),
            ));
        }
        self.backward_from(loss, Tensor::full(v.shape().to_vec(), T::one()))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `node`.
    pub fn backward_from(&self, node: NodeId, seed: Tensor<T>) -> Result<Gradients<T>> {
        assert_eq!(node.tape, self.id, "node from another tape");
        self.nodes[node.index].value.same_shape(&seed, "backward seed")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[node.index] = Some(seed);
        for i in (0..=node.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let n = &self.nodes[i];
            if let Kind::Op(prim) = &n.kind {
                if n.requires_grad {
                    let vals: Vec<&Tensor<T>> = n.inputs.iter().map(|&j| &self.nodes[j].value).collect();
                    let parts = backward_rule(prim, &vals, &n.value, n.aux.as_ref(), &g)?;
                    for (&j, part) in n.inputs.iter().zip(parts) {
                        if !self.nodes[j].requires_grad {
                            continue;
                        }
                        let Some(part) = part else { continue };
                        match &mut grads[j] {
                            Some(acc) => acc.add_assign(&part)?,
                            slot => *slot = Some(part),
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        let mut named = BTreeMap::new();
        for (name, &i) in &self.names {
            let g = grads[i]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[i].value.shape().to_vec()));
            named.insert(name.clone(), g);
        }
        Ok(Gradients { named })
    }
}

/// Leaf-name to gradient map. Leaves the loss does not depend on get zeros.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    named: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.named.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.named.iter()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<T>> {
        self.named
    }
}

fn forward<T: Real>(prim: &Primitive, x: &[&Tensor<T>]) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let v = match prim {
        Primitive::Add => x[0].add(x[1])?,
        Primitive::Sub => x[0].sub(x[1])?,
        Primitive::Mul => x[0].zip_map(x[1], |a, b| a * b)?,
        Primitive::Scale(s) => x[0].scale(T::lit(*s)),
        Primitive::Relu => x[0].map(|v| v.max(T::zero())),
        Primitive::Sum => Tensor::scalar(x[0].sum()),
        Primitive::Mean => Tensor::scalar(x[0].mean()),
        Primitive::Conv2d(opts) => conv2d(x[0], x[1], x.get(2).copied(), *opts)?,
        Primitive::Concat => concat_channels(x[0], x[1])?,
        Primitive::PixelShuffle(r) => pixel_shuffle(x[0], *r)?,
        Primitive::BilinearResize(s) => bilinear_resize(x[0], *s)?,
        Primitive::Warp(flow) => backward_warp(x[0], flow)?,
        Primitive::Filter(k) => apply_kernel(x[0], k)?,
        Primitive::Softmax(axis) => softmax_over_axis(x[0], *axis)?,
        Primitive::Sca => {
            let n = (x.len() - 1) / 2;
            let (out, maps) = sca_aggregate(x[0], &x[1..1 + n], &x[1 + n..])?;
            return Ok((out, Some(maps.weights().clone())));
        }
        Primitive::L1Loss => {
            x[0].same_shape(x[1], "l1_loss")?;
            Tensor::scalar(l1_value(x[0], x[1]))
        }
    };
    Ok((v, None))
}

fn l1_value<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    let total: T = a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q).abs()).sum();
    total / T::from_usize(a.len().max(1)).unwrap()
}

type Parts<T> = Vec<Option<Tensor<T>>>;

fn backward_rule<T: Real>(
    prim: &Primitive,
    x: &[&Tensor<T>],
    out: &Tensor<T>,
    aux: Option<&Tensor<T>>,
    g: &Tensor<T>,
) -> Result<Parts<T>> {
    Ok(match prim {
        Primitive::Add => vec![Some(g.clone()), Some(g.clone())],
        Primitive::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        Primitive::Mul => vec![
            Some(g.zip_map(x[1], |a, b| a * b)?),
            Some(g.zip_map(x[0], |a, b| a * b)?),
        ],
        Primitive::Scale(s) => vec![Some(g.scale(T::lit(*s)))],
        Primitive::Relu => vec![Some(g.zip_map(x[0], |gv, xv| if xv > T::zero() { gv } else { T::zero() })?)],
        Primitive::Sum => vec![Some(Tensor::full(x[0].shape().to_vec(), g.data()[0]))],
        Primitive::Mean => {
            let n = T::from_usize(x[0].len().max(1)).unwrap();
            vec![Some(Tensor::full(x[0].shape().to_vec(), g.data()[0] / n))]
        }
        Primitive::Conv2d(opts) => {
            let (gi, gk, gb) = conv2d_backward(x[0], x[1], x.len() == 3, g, *opts)?;
            let mut parts = vec![Some(gi), Some(gk)];
            if x.len() == 3 {
                parts.push(gb);
            }
            parts
        }
        Primitive::Concat => {
            let ca = x[0].chw()?.0;
            let cb = x[1].chw()?.0;
            vec![Some(g.slice_channels(0, ca)?), Some(g.slice_channels(ca, ca + cb)?)]
        }
        Primitive::PixelShuffle(r) => vec![Some(pixel_unshuffle(g, *r)?)],
        Primitive::BilinearResize(s) => vec![Some(bilinear_resize_adjoint(g, x[0].shape(), *s)?)],
        Primitive::Warp(flow) => vec![Some(backward_warp_adjoint(g, flow)?)],
        Primitive::Filter(k) => {
            let adj = |t: &Tensor<T>| depthwise_conv2d_adjoint(t, &k.weights().cast(), PadMode::Replicate);
            let gi = match k.mode() {
                FilterMode::Blur => adj(g)?,
                FilterMode::Sharp => {
                    let two = T::one() + T::one();
                    g.zip_map(&adj(g)?, |a, b| two * a - b)?
                }
                FilterMode::Identity => g.clone(),
            };
            vec![Some(gi)]
        }
        Primitive::Softmax(axis) => vec![Some(crate::tensor::softmax_backward(out, g, *axis)?)],
        Primitive::Sca => {
            let n = (x.len() - 1) / 2;
            let weights = aux.expect("sca forward stores its weights");
            let (dq, dk, dv) = sca_backward(x[0], &x[1..1 + n], &x[1 + n..], weights, g)?;
            let mut parts = vec![Some(dq)];
            parts.extend(dk.into_iter().map(Some));
            parts.extend(dv.into_iter().map(Some));
            parts
        }
        Primitive::L1Loss => {
            let scale = g.data()[0] / T::from_usize(x[0].len().max(1)).unwrap();
            let gp = x[0].zip_map(x[1], |p, q| {
                let d = p - q;
                if d > T::zero() {
                    scale
                } else if d < T::zero() {
                    -scale
                } else {
                    T::zero()
                }
            })?;
            let gq = gp.map(|v| -v);
            vec![Some(gp), Some(gq)]
        }
    })
}
