//! Fully convolutional patch discriminator on feature maps.
//!
//! Four 4×4 convolutions (widths 64, 128, 256, 512 at scale 1) with leaky-ReLU
//! 0.2 and batch norm on layers 2-4, then a 4×4 stride-1 convolution to one
//! channel of raw, unsquashed scores. Layers use stride 2 while the map is large
//! enough; on small maps the trailing layers switch to stride 1 so that every
//! layer keeps a non-empty output (see [`stride_plan`]).

use super::layers::{BatchNorm, Conv, Ctx, Mode};
use super::widths::Widths;
use crate::error::{Error, Result};
use crate::nn::{ConvGeom, Graph, ParamSet, Var};
use crate::rng::derive_rng;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.2;
pub const KERNEL: usize = 4;
const LAYERS: usize = 4;

/// Smallest input edge accepted by [`stride_plan`].
pub const MIN_INPUT: usize = 6;

/// Strides of the four body layers for an input edge of `len`: as many
/// leading stride-2 layers as the map allows, the rest stride 1.
pub fn stride_plan(len: usize) -> Result<[usize; LAYERS]> {
    for n_down in (0..=LAYERS).rev() {
        let mut strides = [1; LAYERS];
        strides[..n_down].iter_mut().for_each(|s| *s = 2);
        if output_len(len, &strides).is_some_and(|o| o >= 1) {
            return Ok(strides);
        }
    }
    Err(Error::Precondition(format!(
        "discriminator input edge {len} is smaller than the receptive minimum {MIN_INPUT}"
    )))
}

fn output_len(len: usize, strides: &[usize; LAYERS]) -> Option<usize> {
    let mut l = len;
    for &s in strides {
        l = ConvGeom::new(KERNEL, s, 1, 1).out_len(l)?;
        if l == 0 {
            return None;
        }
    }
    ConvGeom::new(KERNEL, 1, 1, 1).out_len(l).filter(|&o| o > 0)
}

/// Patch-map edge produced for an input edge of `len`.
pub fn patch_len(len: usize) -> Result<usize> {
    let plan = stride_plan(len)?;
    Ok(output_len(len, &plan).expect("plan is valid"))
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    convs: Vec<Conv>,
    norms: Vec<Option<BatchNorm>>,
    head: Conv,
    pub params: ParamSet,
}

impl Discriminator {
    /// `tag` identifies the parameter set on a shared tape and `stream`
    /// selects the initialization stream.
    pub fn new(seed: u64, stream: u64, tag: u32, in_channels: usize, width_scale: f64) -> Self {
        let widths = Widths::scaled(width_scale).disc;
        let mut rng = derive_rng(seed, stream);
        let mut ps = ParamSet::new(tag);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut c_in = in_channels;
        for (i, &c_out) in widths.iter().enumerate() {
            let with_norm = i > 0;
            convs.push(Conv::new(
                &mut ps,
                &mut rng,
                &format!("layer{}.conv", i + 1),
                c_in,
                c_out,
                ConvGeom::new(KERNEL, 2, 1, 1),
                !with_norm,
            ));
            norms.push(with_norm.then(|| BatchNorm::new(&mut ps, &format!("layer{}.bn", i + 1), c_out, &["shared"])));
            c_in = c_out;
        }
        let head = Conv::new(&mut ps, &mut rng, "head", c_in, 1, ConvGeom::new(KERNEL, 1, 1, 1), true);
        Discriminator {
            convs,
            norms,
            head,
            params: ps,
        }
    }

    pub fn count_params(&self) -> usize {
        self.params.count_trainable()
    }

    /// Trainable scalars of the first layer (weights plus bias).
    pub fn first_layer_params(&self) -> usize {
        let c = &self.convs[0];
        self.params.get(c.weight).len() + c.bias.map_or(0, |b| self.params.get(b).len())
    }

    /// Records a forward pass. Returns the patch map and, in train mode, the
    /// running-statistic updates.
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        x: Var,
        mode: Mode,
        trainable: bool,
    ) -> Result<(Var, super::layers::StatUpdates)> {
        let shape = graph.value(x).shape().to_vec();
        let expected = self.params.get(self.convs[0].weight).shape()[1];
        if shape.len() != 4 || shape[1] != expected {
            return Err(Error::Shape(format!(
                "discriminator expects B×{expected}×h×w features, got {shape:?}"
            )));
        }
        let plan = stride_plan(shape[2].min(shape[3]))?;
        let mut ctx = Ctx::new(graph, &self.params, mode, trainable);
        let mut h = x;
        for ((conv, norm), &stride) in self.convs.iter().zip(&self.norms).zip(&plan) {
            let conv = conv.with_geom(ConvGeom::new(KERNEL, stride, 1, 1));
            h = conv.forward(&mut ctx, h);
            if let Some(bn) = norm {
                h = bn.forward(&mut ctx, h);
            }
            h = ctx.graph.leaky_relu(h, LEAKY_SLOPE);
        }
        let out = self.head.forward(&mut ctx, h);
        let updates = std::mem::take(&mut ctx.updates);
        Ok((out, updates))
    }

    /// Standalone train-mode forward on a constant input; returns the patch map.
    pub fn forward(&mut self, features: &Tensor) -> Result<Tensor> {
        let mut graph = Graph::new();
        let x = graph.constant(features.clone());
        let (out, updates) = self.forward_graph(&mut graph, x, Mode::Train, false)?;
        super::layers::apply_updates(&mut self.params, updates);
        Ok(graph.value(out).clone())
    }
}
