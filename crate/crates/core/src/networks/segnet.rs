//! The segmentation network: dilated residual encoder (output stride 8),
//! pyramid pooling, a two-stage skip-connected decoder, pyramid feature fusion
//! and a pixel classifier.
//!
//! For an `S×S` input the shapes are
//!
//! | stage                  | channels      | resolution |
//! |------------------------|---------------|------------|
//! | stem (7×7/2)           | 64            | S/2        |
//! | stride-2 skip (1×1)    | 64            | S/2        |
//! | max-pool, stage 1      | 64            | S/4        |
//! | stage 2                | 128           | S/8        |
//! | stage 3 (dilation 2)   | 256           | S/8        |
//! | stage 4 (dilation 4)   | 512           | S/8        |
//! | pyramid pooling → `p`  | 512           | S/8        |
//! | decoder block 1        | 256           | S/4        |
//! | decoder block 2        | 128           | S/2        |
//! | fusion → `f`           | 512           | S/4        |
//! | classifier → logits    | 2             | S          |
//!
//! Channel counts above are at width scale 1.

use rand_chacha::ChaCha8Rng;

use super::layers::{apply_updates, conv1, conv3, Conv, ConvBn, Ctx, Mode};
use super::widths::Widths;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::nn::{ConvGeom, Graph, ParamSet, Var};
use crate::rng::{derive_rng, streams};
use crate::tensor::Tensor;

pub const PPM_BINS: [usize; 4] = [1, 2, 3, 6];
pub const OUTPUT_STRIDE: usize = 8;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    downsample: Option<ConvBn>,
}

impl BasicBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let conv1 = ConvBn::new(ps, rng, &format!("{name}.conv1"), c_in, c_out, conv3(stride, dilation), true);
        let conv2 = ConvBn::new(ps, rng, &format!("{name}.conv2"), c_out, c_out, conv3(1, dilation), false);
        let downsample = (stride != 1 || c_in != c_out).then(|| {
            ConvBn::new(
                ps,
                rng,
                &format!("{name}.downsample"),
                c_in,
                c_out,
                ConvGeom::new(1, stride, 0, 1),
                false,
            )
        });
        BasicBlock {
            conv1,
            conv2,
            downsample,
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let y = self.conv1.forward(ctx, x);
        let y = self.conv2.forward(ctx, y);
        let shortcut = match &self.downsample {
            Some(d) => d.forward(ctx, x),
            None => x,
        };
        let sum = ctx.graph.add(y, shortcut);
        ctx.graph.relu(sum)
    }
}

#[derive(Debug, Clone)]
struct Architecture {
    stem: ConvBn,
    skip2: ConvBn,
    stages: Vec<Vec<BasicBlock>>,
    ppm_branches: Vec<ConvBn>,
    ppm_fuse: ConvBn,
    up1: ConvBn,
    up2: ConvBn,
    fuse: ConvBn,
    cls_mid: ConvBn,
    cls_out: Conv,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct SegVars {
    /// Pyramid-pooled representation, `B × ppm_out × S/8 × S/8`.
    pub p: Var,
    /// Fused feature, `B × fused × S/4 × S/4`.
    pub f: Var,
    /// Class logits, `B × 2 × S × S`.
    pub logits: Var,
}

/// Materialized outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct SegForwardOutput {
    pub p: Tensor,
    pub f: Tensor,
    pub logits: Tensor,
}

#[derive(Debug, Clone)]
pub struct SegmentationNetwork {
    arch: Architecture,
    widths: Widths,
    pub params: ParamSet,
}

pub const GENERATOR_TAG: u32 = 0;

fn stats_slot(domain: Domain) -> usize {
    match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

impl SegmentationNetwork {
    /// Deterministic He-normal initialization from `seed`.
    pub fn new(seed: u64, width_scale: f64) -> Self {
        let widths = Widths::scaled(width_scale);
        let mut rng = derive_rng(seed, streams::GENERATOR_INIT);
        let mut ps = ParamSet::new(GENERATOR_TAG);
        let w = widths;
        let rng = &mut rng;

        let stem = ConvBn::new(&mut ps, rng, "backbone.stem", 3, w.stem, ConvGeom::new(7, 2, 3, 1), true);
        let skip2 = ConvBn::new(&mut ps, rng, "backbone.skip2", w.stem, w.skip2, conv1(), true);
        let plan = [(1, 1), (2, 1), (1, 2), (1, 4)];
        let mut stages = Vec::new();
        let mut c_in = w.stem;
        for (i, (&c_out, &(stride, dilation))) in w.stages.iter().zip(&plan).enumerate() {
            let b0 = BasicBlock::new(&mut ps, rng, &format!("backbone.stage{}.0", i + 1), c_in, c_out, stride, dilation);
            let b1 = BasicBlock::new(&mut ps, rng, &format!("backbone.stage{}.1", i + 1), c_out, c_out, 1, dilation);
            stages.push(vec![b0, b1]);
            c_in = c_out;
        }
        let top = w.stages[3];
        let ppm_branches = PPM_BINS
            .iter()
            .map(|b| ConvBn::new(&mut ps, rng, &format!("ppm.bin{b}"), top, w.ppm_branch, conv1(), true))
            .collect();
        let ppm_fuse = ConvBn::new(
            &mut ps,
            rng,
            "ppm.fuse",
            top + PPM_BINS.len() * w.ppm_branch,
            w.ppm_out,
            conv3(1, 1),
            true,
        );
        let up1 = ConvBn::new(&mut ps, rng, "decoder.up1", w.ppm_out + w.stages[0], w.up1, conv3(1, 1), true);
        let up2 = ConvBn::new(&mut ps, rng, "decoder.up2", w.up1 + w.skip2, w.up2, conv3(1, 1), true);
        let fuse = ConvBn::new(&mut ps, rng, "fusion", w.ppm_out + w.up1 + w.up2, w.fused, conv1(), true);
        let cls_mid = ConvBn::new(&mut ps, rng, "classifier.mid", w.fused, w.cls_mid, conv3(1, 1), true);
        let cls_out = Conv::new(&mut ps, rng, "classifier.out", w.cls_mid, NUM_CLASSES, conv1(), true);

        SegmentationNetwork {
            arch: Architecture {
                stem,
                skip2,
                stages,
                ppm_branches,
                ppm_fuse,
                up1,
                up2,
                fuse,
                cls_mid,
                cls_out,
            },
            widths,
            params: ps,
        }
    }

    pub fn widths(&self) -> Widths {
        self.widths
    }

    /// Trainable scalar count.
    pub fn count_params(&self) -> usize {
        self.params.count_trainable()
    }

    pub fn check_input(shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("expected B×3×S×S images, got {shape:?}")));
        }
        let (h, w) = (shape[2], shape[3]);
        if h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 || h == 0 || w == 0 {
            return Err(Error::Precondition(format!(
                "input size {h}×{w} is not divisible by {OUTPUT_STRIDE}"
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `graph`. Normalization reads (and in train
    /// mode updates) the running statistics of `domain`; the returned updates
    /// must be applied with [`apply_updates`] before the next forward.
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        images: Var,
        mode: Mode,
        trainable: bool,
        domain: Domain,
    ) -> Result<(SegVars, super::layers::StatUpdates)> {
        let shape = graph.value(images).shape().to_vec();
        Self::check_input(&shape)?;
        let (h, w) = (shape[2], shape[3]);
        let a = &self.arch;
        let mut ctx = Ctx::new(graph, &self.params, mode, trainable).with_stats_slot(stats_slot(domain));

        let stem = a.stem.forward(&mut ctx, images);
        let skip2 = a.skip2.forward(&mut ctx, stem);
        let mut x = ctx.graph.max_pool(stem, 3, 2, 1);
        let mut skip4 = x;
        for (i, stage) in a.stages.iter().enumerate() {
            for block in stage {
                x = block.forward(&mut ctx, x);
            }
            if i == 0 {
                skip4 = x;
            }
        }

        let (h8, w8) = (h / 8, w / 8);
        let mut pyramid = vec![x];
        for (branch, &bins) in a.ppm_branches.iter().zip(&PPM_BINS) {
            let pooled = ctx.graph.adaptive_avg_pool(x, bins);
            let proj = branch.forward(&mut ctx, pooled);
            pyramid.push(ctx.graph.resize(proj, h8, w8));
        }
        let cat = ctx.graph.concat(&pyramid);
        let p = a.ppm_fuse.forward(&mut ctx, cat);

        let (h4, w4) = (h / 4, w / 4);
        let (h2, w2) = (h / 2, w / 2);
        let p_up = ctx.graph.resize(p, h4, w4);
        let cat1 = ctx.graph.concat(&[p_up, skip4]);
        let u1 = a.up1.forward(&mut ctx, cat1);
        let u1_up = ctx.graph.resize(u1, h2, w2);
        let cat2 = ctx.graph.concat(&[u1_up, skip2]);
        let u2 = a.up2.forward(&mut ctx, cat2);

        let u2_down = ctx.graph.resize(u2, h4, w4);
        let cat3 = ctx.graph.concat(&[p_up, u1, u2_down]);
        let f = a.fuse.forward(&mut ctx, cat3);

        let c = a.cls_mid.forward(&mut ctx, f);
        let c = a.cls_out.forward(&mut ctx, c);
        let logits = ctx.graph.resize(c, h, w);

        let updates = std::mem::take(&mut ctx.updates);
        Ok((SegVars { p, f, logits }, updates))
    }

    /// Standalone forward. Train mode updates running statistics.
    pub fn forward(&mut self, images: &Tensor, mode: Mode, domain: Domain) -> Result<SegForwardOutput> {
        let mut graph = Graph::new();
        let x = graph.constant(images.clone());
        let (vars, updates) = self.forward_graph(&mut graph, x, mode, false, domain)?;
        apply_updates(&mut self.params, updates);
        Ok(SegForwardOutput {
            p: graph.value(vars.p).clone(),
            f: graph.value(vars.f).clone(),
            logits: graph.value(vars.logits).clone(),
        })
    }

    /// Eval-mode forward without touching parameters.
    pub fn infer(&self, images: &Tensor, domain: Domain) -> Result<SegForwardOutput> {
        let mut graph = Graph::new();
        let x = graph.constant(images.clone());
        let (vars, _) = self.forward_graph(&mut graph, x, Mode::Eval, false, domain)?;
        Ok(SegForwardOutput {
            p: graph.value(vars.p).clone(),
            f: graph.value(vars.f).clone(),
            logits: graph.value(vars.logits).clone(),
        })
    }

    /// Name of the final classifier bias entry.
    pub fn classifier_bias_name() -> &'static str {
        "classifier.out.bias"
    }

    pub fn classifier_weight_name() -> &'static str {
        "classifier.out.weight"
    }
}
