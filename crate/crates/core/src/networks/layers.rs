use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{ConvGeom, Graph, ParamId, ParamSet, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Normalization uses running statistics; nothing is updated.
    Eval,
}

/// Running-statistic buffers produced by a training-mode forward pass.
pub type StatUpdates = Vec<(ParamId, Vec<f32>)>;

/// Per-forward state: the tape, the parameters being read, and pending
/// running-statistic updates produced by train-mode normalization.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    pub params: &'a ParamSet,
    pub mode: Mode,
    /// Whether parameters should receive gradients in this graph.
    pub trainable: bool,
    /// Which running-statistics slot normalization layers read and update.
    pub stats_slot: usize,
    pub updates: StatUpdates,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a mut Graph, params: &'a ParamSet, mode: Mode, trainable: bool) -> Self {
        Ctx {
            graph,
            params,
            mode,
            trainable,
            stats_slot: 0,
            updates: Vec::new(),
        }
    }

    pub fn with_stats_slot(mut self, slot: usize) -> Self {
        self.stats_slot = slot;
        self
    }

    fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.params, id, self.trainable)
    }
}

/// Writes running-statistic updates collected during a train-mode forward.
pub fn apply_updates(params: &mut ParamSet, updates: StatUpdates) {
    for (id, values) in updates {
        params.get_mut(id).data_mut().copy_from_slice(&values);
    }
}

pub(crate) fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng) as f32).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let weight = ps.add(
            format!("{name}.weight"),
            he_normal(rng, &[c_out, c_in, geom.kernel, geom.kernel]),
            true,
        );
        let bias = bias.then(|| ps.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), true));
        Conv { weight, bias, geom }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv2d(x, w, b, self.geom)
    }

    pub fn with_geom(&self, geom: ConvGeom) -> Conv {
        Conv {
            geom,
            ..self.clone()
        }
    }
}

/// Batch norm with shared affine parameters and one or more independent
/// running-statistics slots. Slot 0 is named `running_mean`/`running_var`,
/// slot `k > 0` gets the suffix `_{suffixes[k]}`.
/// Generator normalization keeps separate running statistics per domain.
pub const GENERATOR_STATS: [&str; 2] = ["source", "target"];

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// `(running_mean, running_var)` per slot.
    pub running: Vec<(ParamId, ParamId)>,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamSet, name: &str, c: usize, slots: &[&str]) -> Self {
        let gamma = ps.add(format!("{name}.weight"), Tensor::full(&[c], 1.0), true);
        let beta = ps.add(format!("{name}.bias"), Tensor::zeros(&[c]), true);
        let running = slots
            .iter()
            .enumerate()
            .map(|(k, suffix)| {
                let suffix = if k == 0 { String::new() } else { format!("_{suffix}") };
                (
                    ps.add(format!("{name}.running_mean{suffix}"), Tensor::zeros(&[c]), false),
                    ps.add(format!("{name}.running_var{suffix}"), Tensor::full(&[c], 1.0), false),
                )
            })
            .collect();
        BatchNorm { gamma, beta, running }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let (running_mean, running_var) = self.running[ctx.stats_slot];
        match ctx.mode {
            Mode::Train => {
                let (y, mean, var) = ctx.graph.batch_norm_train(x, gamma, beta);
                let mut rm = ctx.params.get(running_mean).data().to_vec();
                let mut rv = ctx.params.get(running_var).data().to_vec();
                crate::nn::norm::update_running(&mut rm, &mean);
                crate::nn::norm::update_running(&mut rv, &var);
                ctx.updates.push((running_mean, rm));
                ctx.updates.push((running_var, rv));
                y
            }
            Mode::Eval => {
                let rm = ctx.params.get(running_mean).data();
                let rv = ctx.params.get(running_var).data();
                ctx.graph.batch_norm_eval(x, gamma, beta, rm, rv)
            }
        }
    }
}

/// Convolution (no bias) → batch norm → optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        relu: bool,
    ) -> Self {
        ConvBn {
            conv: Conv::new(ps, rng, &format!("{name}.conv"), c_in, c_out, geom, false),
            bn: BatchNorm::new(ps, &format!("{name}.bn"), c_out, &GENERATOR_STATS),
            relu,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let y = self.conv.forward(ctx, x);
        let y = self.bn.forward(ctx, y);
        if self.relu {
            ctx.graph.relu(y)
        } else {
            y
        }
    }
}

/// Same-size 3×3 convolution geometry with the given dilation.
pub fn conv3(stride: usize, dilation: usize) -> ConvGeom {
    ConvGeom::new(3, stride, dilation, dilation)
}

pub fn conv1() -> ConvGeom {
    ConvGeom::new(1, 1, 0, 1)
}
